#pragma once

// Named finite-difference checks for every differentiable building block,
// each run over many random seeds in float64.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ecm/gradcheck.hpp"

namespace ecm {

struct GradcheckCase {
  std::string name;
  /// One randomized instance; combines input and parameter checks.
  std::function<GradcheckResult(std::uint64_t seed)> run;
};

const std::vector<GradcheckCase>& gradcheck_registry();
std::vector<std::string> gradcheck_names();

struct SuiteOptions {
  int seeds = 20;           // clean instances required per operation
  int max_tries = 100;      // instances drawn before giving up
  double tolerance = 1e-4;  // on the max relative error
  /// Instances whose forward pass comes closer than this to a kink are
  /// redrawn, since a central difference straddling one is meaningless.
  double clearance = 1e-4;
  std::uint64_t first_seed = 0;
};

struct OpReport {
  std::string name;
  double max_rel_error = 0.0;
  int seeds_clean = 0;
  int seeds_tried = 0;
  double seconds = 0.0;
  bool passed = false;
};

/// `target` is a registered name or "all". Throws ConfigError("op") listing
/// the registered names when it is neither.
std::vector<OpReport> run_gradcheck(const std::string& target, const SuiteOptions& options = {});

}  // namespace ecm
