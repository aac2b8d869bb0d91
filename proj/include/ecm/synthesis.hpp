#pragma once

// Intermediate-frame synthesis: flow reversal with learned residuals, mask
// blending of the two backward-warped frames and a dilated refinement stage.

#include <memory>
#include <span>
#include <vector>

#include "ecm/estimator.hpp"

namespace ecm {

struct SynthesisBundle {
  Var flow01, flow10;    // estimator output
  Var flow_t0, flow_t1;  // anchored at the intermediate time
  Var mask;              // [N,1,H,W] in [0, 1], weight of the frame-0 warp
  Var warped0, warped1;  // I_{0->t}, I_{1->t}
  Var blend;
  Var refine;
  std::vector<LevelTrace> trace;
};

/// mask * a + (1 - mask) * b with an [N,1,H,W] mask broadcast over channels.
Var mask_mix(const Var& a, const Var& b, const Var& mask);

/// Backward-warps both frames to time t and mixes them with `mask`.
struct Blended {
  Var warped0, warped1, image;
};
Blended blend(const Var& image0, const Var& image1, const Var& flow_t0, const Var& flow_t1, const Var& mask);

class FrameSynthesizer {
 public:
  FrameSynthesizer(ParameterSet& params, const RunConfig& config);

  /// Fuses upsampled encoder features, shallow image features, both frames and
  /// both flows. Every input must have the frames' spatial extents.
  Var build_context(const Var& image0, const Var& image1, const Var& flow01, const Var& flow10, const Var& feature0,
                    const Var& feature1) const;

  struct Intermediate {
    Var flow_t0, flow_t1, mask;
  };
  /// `t` holds one time per sample, each in (0, 1).
  Intermediate intermediate_flows(const Var& flow01, const Var& flow10, std::span<const double> t,
                                  const Var& context) const;

  Var refine(const Var& blended, const Var& context, const Var& image0, const Var& image1, const Var& flow_t0,
             const Var& flow_t1) const;

 private:
  RunConfig config_;
  Conv image_feat_;
  Conv context_;
  std::vector<Conv> down_;  // stride 1, then three stride-2 stages
  std::vector<Conv> up_;
  Conv flow_head_;
  std::vector<Conv> refine_;
  Conv refine_head_;
};

/// Estimator plus synthesizer over one parameter set.
class InterpolationModel {
 public:
  explicit InterpolationModel(const RunConfig& config);
  InterpolationModel(const InterpolationModel&) = delete;
  InterpolationModel& operator=(const InterpolationModel&) = delete;

  ParameterSet& parameters() { return *params_; }
  const ParameterSet& parameters() const { return *params_; }
  const RunConfig& config() const { return config_; }
  const FlowEstimator& estimator() const { return *estimator_; }
  const FrameSynthesizer& synthesizer() const { return *synthesizer_; }

  SynthesisBundle interpolate(const Var& image0, const Var& image1, std::span<const double> t,
                              bool keep_trace = false) const;
  SynthesisBundle interpolate(const Var& image0, const Var& image1, double t, bool keep_trace = false) const;

 private:
  RunConfig config_;
  std::unique_ptr<ParameterSet> params_;
  std::unique_ptr<FlowEstimator> estimator_;
  std::unique_ptr<FrameSynthesizer> synthesizer_;
};

}  // namespace ecm
