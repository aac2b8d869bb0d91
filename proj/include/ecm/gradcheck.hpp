#pragma once

// Central finite-difference verification of reverse-mode gradients.
//
// The scalar probed is sum(R * f(inputs)) for a fixed random tensor R, so every
// output element contributes with a distinct weight.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ecm/autograd.hpp"

namespace ecm {

struct GradcheckOptions {
  double step = 1e-4;
  /// Denominator floor in |a - n| / max(|a|, |n|, floor).
  double floor = 1e-3;
  /// Coordinates probed per tensor; <= 0 probes all of them.
  std::int64_t max_coords = 0;
  std::uint64_t seed = 0;
  /// Parameter checks skip tensors whose name does not start with this.
  std::string parameter_prefix;
};

struct GradcheckResult {
  double max_rel_error = 0.0;
  std::int64_t coords_checked = 0;
  /// Closest approach of the unperturbed forward pass to a non-differentiable
  /// point (see KinkMonitor). Probes within about `step` of one are unreliable.
  double nearest_kink = 0.0;
};

using GraphFn = std::function<Var(Tape&, const std::vector<Var>&)>;

/// Checks d sum(R * f) / d inputs. Inputs must be float64.
GradcheckResult check_input_gradients(const GraphFn& f, const std::vector<Tensor>& inputs,
                                      const GradcheckOptions& options = {});

/// Same, for gradients w.r.t. every tensor in `params` (which `f` binds via
/// Tape::parameter). The inputs to `f` are `inputs`, held constant.
GradcheckResult check_parameter_gradients(const GraphFn& f, const std::vector<Tensor>& inputs, ParameterSet& params,
                                          const GradcheckOptions& options = {});

}  // namespace ecm
