#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include "ecm/tensor.hpp"

namespace testutil {

inline ecm::Tensor random_tensor(const ecm::Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0,
                                 ecm::DType dtype = ecm::DType::kFloat64) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  ecm::Tensor t(shape, ecm::DType::kFloat64);
  for (auto& v : t.data<double>()) v = u(rng);
  return t.cast(dtype);
}

inline double max_abs_diff(const ecm::Tensor& a, const ecm::Tensor& b) {
  if (a.shape() != b.shape()) return INFINITY;
  double m = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.at(i) - b.at(i)));
  return m;
}

// Index into a contiguous NCHW tensor.
inline std::int64_t nchw(const ecm::Tensor& t, std::int64_t n, std::int64_t c, std::int64_t y, std::int64_t x) {
  return ((n * t.dim(1) + c) * t.dim(2) + y) * t.dim(3) + x;
}

// Mean end-point error of an NCHW flow (first sample) against the constant
// flow (dx, dy), skipping `margin` pixels on each side.
inline double interior_epe(const ecm::Tensor& flow, double dx, double dy, std::int64_t margin) {
  const std::int64_t h = flow.dim(2), w = flow.dim(3);
  double sum = 0.0;
  std::int64_t n = 0;
  for (std::int64_t y = margin; y < h - margin; ++y)
    for (std::int64_t x = margin; x < w - margin; ++x, ++n)
      sum += std::hypot(flow.at(nchw(flow, 0, 0, y, x)) - dx, flow.at(nchw(flow, 0, 1, y, x)) - dy);
  return sum / static_cast<double>(n);
}

// Fresh scratch directory under the system temp path.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("ecm_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testutil
