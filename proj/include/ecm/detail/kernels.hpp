#pragma once

#include <cstdint>

#include "ecm/tensor.hpp"

namespace ecm::kernels {

/// dst += src; shapes and dtypes must match.
void add_inplace(Tensor& dst, const Tensor& src);

void check_same_dtype(const Tensor& a, const Tensor& b, const char* op);

/// Mirror index into [0, n) without repeating the edge sample; periodic for
/// offsets larger than the extent.
inline std::int64_t reflect_index(std::int64_t i, std::int64_t n) {
  if (n == 1) return 0;
  const std::int64_t period = 2 * (n - 1);
  std::int64_t m = i % period;
  if (m < 0) m += period;
  return m < n ? m : period - m;
}

}  // namespace ecm::kernels
