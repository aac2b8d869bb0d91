#include "ecm/losses.hpp"

#include "ecm/errors.hpp"
#include "ecm/ops.hpp"

namespace ecm {

Var l1_loss(const Var& pred, const Var& target) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("l1_loss: prediction " + to_string(pred.shape()) + " vs target " + to_string(target.shape()));
  }
  return sum(abs(sub(pred, target)));
}

Var loss_total(const Var& blend_loss, const Var& refine_loss) {
  return add(blend_loss, scale(refine_loss, kRefineLossWeight));
}

}  // namespace ecm
