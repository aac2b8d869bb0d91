#pragma once

#include <cstdint>
#include <span>

#include "ecm/autograd.hpp"

namespace ecm {

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update on every parameter of the set.
void adam_step(ParameterSet& params, const AdamOptions& options);
void adam_step(std::span<Parameter* const> params, const AdamOptions& options);

/// Zero-mean Gaussian with standard deviation sqrt(2 / fan_in).
Tensor he_normal(const Shape& shape, std::int64_t fan_in, std::uint64_t seed, DType dtype);

}  // namespace ecm
