#pragma once

// Reconstruction losses. Both terms are plain sums of absolute differences
// over every pixel, channel and sample; nothing is averaged.

#include "ecm/autograd.hpp"

namespace ecm {

/// sum |pred - target|. Throws ShapeError unless the shapes are equal.
Var l1_loss(const Var& pred, const Var& target);

inline Var loss_blend(const Var& blended, const Var& target) { return l1_loss(blended, target); }
inline Var loss_refine(const Var& refined, const Var& target) { return l1_loss(refined, target); }

/// The refinement term counts twice.
inline constexpr double kRefineLossWeight = 2.0;

Var loss_total(const Var& blend_loss, const Var& refine_loss);
inline double loss_total(double blend_loss, double refine_loss) { return blend_loss + kRefineLossWeight * refine_loss; }

}  // namespace ecm
