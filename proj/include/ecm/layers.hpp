#pragma once

#include <cstdint>
#include <string>

#include "ecm/autograd.hpp"
#include "ecm/ops.hpp"

namespace ecm {

enum class Init { kHe, kZero };

/// 2-D convolution layer whose weight and bias live in a ParameterSet under
/// "<name>.weight" / "<name>.bias". Kernels get He fan-in init seeded from the
/// run seed and the layer name, biases start at zero.
class Conv {
 public:
  Conv() = default;
  Conv(ParameterSet& params, const std::string& name, std::int64_t in_channels, std::int64_t out_channels, int kernel,
       Conv2dOptions options, std::uint64_t seed, DType dtype, Init init = Init::kHe);

  /// Binds the parameters on x's tape and applies the convolution.
  Var operator()(const Var& x) const;

  Parameter& weight() const { return *weight_; }
  Parameter& bias() const { return *bias_; }
  std::int64_t out_channels() const { return weight_->value.dim(0); }

 private:
  Parameter* weight_ = nullptr;
  Parameter* bias_ = nullptr;
  Conv2dOptions options_;
};

/// Stable 64-bit hash (FNV-1a) used to derive per-layer seeds.
std::uint64_t name_hash(const std::string& name);

}  // namespace ecm
