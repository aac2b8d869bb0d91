#pragma once

// Backward warping (bilinear sampling) and forward warping (softmax
// splatting). Flows are [N,2,H,W] in pixels; importance weights are
// [N,1,H,W] log-weights that enter only as exp(w) inside the normalised splat.

#include "ecm/autograd.hpp"

namespace ecm {

/// out(p) = bilinear sample of `source` at p + flow(p). Sample coordinates
/// are clamped to the image, so out-of-frame lookups repeat the border.
Var backward_warp(const Var& source, const Var& flow);

/// Non-differentiable variant of backward_warp for plain tensors.
Tensor backward_warp_values(const Tensor& source, const Tensor& flow);

struct SplatResult {
  Var output;
  /// Sum of exp(w) * bilinear coefficient landing on each target pixel,
  /// [N,1,H,W]. Returned detached (no gradient).
  Tensor coverage;
};

/// Each source pixel q scatters exp(w(q)) * source(q) onto the four integer
/// neighbours of q + flow(q) with bilinear coefficients k. Mass landing
/// outside the frame is dropped. The output is
///   sum(exp(w) * v * k) / max(sum(exp(w) * k), eps),
/// a convex combination wherever something landed and 0 in empty pixels.
SplatResult softmax_splat(const Var& source, const Var& flow, const Var& weight, double eps);

/// Coverage map of softmax_splat without splatting any values.
Tensor splat_coverage(const Tensor& flow, const Tensor& weight);

struct ReversedFlow {
  Var flow;
  Tensor coverage;
  /// 1 where coverage < coverage_eps; those pixels are zero in `flow`.
  Tensor holes;
};

/// Flow reversal: splats scale * flow forward along itself and negates, so a
/// flow anchored at the source frame becomes one anchored at the target that
/// points back to the source.
ReversedFlow splat_flow(const Var& flow, double scale, const Var& weight, double eps, double coverage_eps);

}  // namespace ecm
