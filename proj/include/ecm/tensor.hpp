#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "ecm/errors.hpp"

namespace ecm {

enum class DType : std::uint8_t { kFloat32 = 0, kFloat64 = 1 };

using Shape = std::vector<std::int64_t>;

std::string to_string(DType dtype);
std::string to_string(const Shape& shape);
std::int64_t shape_numel(const Shape& shape);

/// Calls `fn(std::type_identity<T>{})` with T = float or double matching `dtype`.
template <typename Fn>
decltype(auto) dispatch(DType dtype, Fn&& fn) {
  if (dtype == DType::kFloat32) return fn(std::type_identity<float>{});
  return fn(std::type_identity<double>{});
}

template <typename T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? DType::kFloat32 : DType::kFloat64;
}

/// Dense row-major array of float32 or float64 values.
class Tensor {
 public:
  Tensor() : Tensor(Shape{0}, DType::kFloat64) {}
  Tensor(Shape shape, DType dtype);

  static Tensor zeros(Shape shape, DType dtype) { return Tensor(std::move(shape), dtype); }
  static Tensor full(Shape shape, double value, DType dtype);
  static Tensor scalar(double value, DType dtype) { return full(Shape{}, value, dtype); }
  static Tensor from_values(Shape shape, std::span<const double> values, DType dtype);
  static Tensor from_values(Shape shape, std::initializer_list<double> values, DType dtype) {
    return from_values(std::move(shape), std::span<const double>(values.begin(), values.size()), dtype);
  }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  /// Extent of axis `axis`; negative values count from the back.
  std::int64_t dim(int axis) const;
  std::int64_t numel() const;
  DType dtype() const { return storage_.index() == 0 ? DType::kFloat32 : DType::kFloat64; }

  template <typename T>
  std::span<const T> data() const {
    const auto* v = std::get_if<std::vector<T>>(&storage_);
    if (v == nullptr) throw Error("tensor dtype is " + to_string(dtype()) + ", requested " + to_string(dtype_of<T>()));
    return {v->data(), v->size()};
  }

  template <typename T>
  std::span<T> data() {
    auto* v = std::get_if<std::vector<T>>(&storage_);
    if (v == nullptr) throw Error("tensor dtype is " + to_string(dtype()) + ", requested " + to_string(dtype_of<T>()));
    return {v->data(), v->size()};
  }

  double at(std::int64_t flat_index) const;
  /// Value of a single-element tensor.
  double item() const;
  std::vector<double> to_vector() const;

  Tensor cast(DType dtype) const;
  Tensor reshaped(Shape shape) const;
  bool all_finite() const;

  /// Bit-level equality of shape, dtype and stored values.
  bool identical(const Tensor& other) const;

 private:
  Shape shape_;
  std::variant<std::vector<float>, std::vector<double>> storage_;
};

}  // namespace ecm
