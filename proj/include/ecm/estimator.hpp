#pragma once

// Bidirectional flow estimation by forward-warp correlation matching in a
// recurrent pyramid whose parameters are shared across levels and directions.

#include <cstdint>
#include <vector>

#include "ecm/autograd.hpp"
#include "ecm/io/config.hpp"
#include "ecm/layers.hpp"

namespace ecm {

/// Masking value for correlation candidates outside the frame.
inline constexpr double kMaskedCorrelation = -1e9;

/// corr(p, d) = sum_c warped(c, p) * target(c, p + d) / sqrt(C) for
/// d in [-r, r]^2, stored at channel (dy + r) * (2r + 1) + (dx + r).
/// Candidates outside the frame are set to kMaskedCorrelation.
Var local_correlation(const Var& warped, const Var& target, int r);

/// flow_prev + sum_d softmax_d(tau * cost) * d.
Var soft_argmax_update(const Var& cost, const Var& flow_prev, int r, double tau);

/// Brings a flow defined at target pixels back to source pixels by sampling it
/// at p + carrier(p). Where that position is off-frame or was not covered by
/// the splat of the carrier (coverage < coverage_eps), the carrier is kept.
Var rewarp_flow_to_source(const Var& updated, const Var& carrier, const Var& weight, double coverage_eps);

/// R_1 = D_initial * r, R_l = R_{l-1} * D + r: maximum displacement in input
/// pixels recoverable after each level.
std::vector<std::int64_t> search_range(const RunConfig& config);

struct CostStats {
  double min = 0.0;
  double max = 0.0;
  double mean = 0.0;
};

/// Per-level record for debug dumps (level 1 is the coarsest).
struct LevelTrace {
  int level = 0;
  Tensor flow01;
  Tensor flow10;
  CostStats cost01;
  CostStats cost10;
};

struct BiFlow {
  Var flow01;  // at input resolution
  Var flow10;
  Var feature0;  // encoder output on the padded input, stride D_initial
  Var feature1;
  std::int64_t padded_height = 0;
  std::int64_t padded_width = 0;
  std::vector<LevelTrace> trace;
};

class FlowEstimator {
 public:
  FlowEstimator(ParameterSet& params, const RunConfig& config);

  Var encode(const Var& image) const;
  Var downsample_feature(const Var& feature) const;

  struct Upscaled {
    Var flow;
    Var weight;
  };
  /// One direction: bilinear x D upsampling of flow (values scaled by D) and
  /// weight, then a decoder over (flow, weight, feat_a, feat_b) adds a flow
  /// residual and emits the next importance weight.
  Upscaled upscale_flow(const Var& flow, const Var& weight, const Var& feat_a, const Var& feat_b) const;

  /// One matching step at a level for direction a -> b.
  Var update_flow(const Var& feat_a, const Var& feat_b, const Var& flow, const Var& weight,
                  CostStats* stats = nullptr) const;

  BiFlow estimate(const Var& image0, const Var& image1, bool keep_trace = false) const;

  /// Multiple of which the padded input extents are chosen.
  std::int64_t size_multiple() const;

 private:
  RunConfig config_;
  Conv enc_in_;
  std::vector<Conv> enc_down_;
  Conv enc_out_;
  Conv down_;
  Conv up1_;
  Conv up2_;
  Conv up_residual_;
  Conv up_weight_;
};

}  // namespace ecm
