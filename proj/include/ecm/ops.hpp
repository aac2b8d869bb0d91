#pragma once

// Differentiable tensor operations. Every function records its output on the
// tape of its first input and registers the matching gradient rule.
//
// Images, features and flows use NCHW layout. Flow fields carry two channels
// (dx, dy) in pixel units, dx positive rightward, dy positive downward.

#include <cstdint>
#include <span>
#include <vector>

#include "ecm/autograd.hpp"

namespace ecm {

// Binary elementwise ops. Broadcasting follows the trailing-dimension rule:
// the operand shapes are equal, one is a suffix of the other, or one holds a
// single element. Anything else throws ShapeError.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);

Var neg(const Var& x);
Var scale(const Var& x, double factor);
Var add_scalar(const Var& x, double offset);
Var exp(const Var& x);
Var sigmoid(const Var& x);
Var leaky_relu(const Var& x, double slope = 0.1);
Var abs(const Var& x);
Var square(const Var& x);
/// Gradient passes where lo < x < hi and is zero elsewhere.
Var clamp(const Var& x, double lo, double hi);

Var sum(const Var& x);
Var mean(const Var& x);

/// Multiplies sample n of an N-leading tensor by scales[n].
Var scale_per_sample(const Var& x, std::span<const double> scales);

struct Conv2dOptions {
  int stride = 1;
  int dilation = 1;
  int padding = 0;
};

/// Cross-correlation of NCHW `input` with OIKK `kernel` (zero padding).
/// `bias` may be an invalid Var; otherwise it has shape [O].
Var conv2d(const Var& input, const Var& kernel, const Var& bias, Conv2dOptions options);

/// Numerically stable softmax along `axis` (max subtracted before exp).
Var softmax(const Var& x, int axis);

Var concat(const std::vector<Var>& parts, int axis);
Var slice(const Var& x, int axis, std::int64_t begin, std::int64_t end);
/// Reverses the order of entries along `axis`.
Var flip(const Var& x, int axis);

/// Bilinear resize of an NCHW tensor with half-pixel centres and clamped borders.
Var resize_bilinear(const Var& x, std::int64_t out_h, std::int64_t out_w);

/// Mirror padding of an NCHW tensor (edge sample not repeated).
Var pad_reflect(const Var& x, std::int64_t top, std::int64_t bottom, std::int64_t left, std::int64_t right);
Var crop(const Var& x, std::int64_t top, std::int64_t left, std::int64_t height, std::int64_t width);

/// out = mask ? a : b, with `mask` shaped [N,1,H,W] and broadcast over channels.
/// The mask is a constant; gradients flow to whichever branch was selected.
Var select(const Tensor& mask, const Var& a, const Var& b);

}  // namespace ecm
