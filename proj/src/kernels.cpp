#include "ecm/detail/kernels.hpp"

namespace ecm::kernels {

void add_inplace(Tensor& dst, const Tensor& src) {
  if (dst.shape() != src.shape() || dst.dtype() != src.dtype()) {
    throw ShapeError("add_inplace: " + to_string(dst.shape()) + " vs " + to_string(src.shape()));
  }
  dispatch(dst.dtype(), [&](auto tag) {
    using T = typename decltype(tag)::type;
    auto d = dst.data<T>();
    auto s = src.data<T>();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
  });
}

void check_same_dtype(const Tensor& a, const Tensor& b, const char* op) {
  if (a.dtype() != b.dtype()) {
    throw Error(std::string(op) + ": dtype mismatch (" + to_string(a.dtype()) + " vs " + to_string(b.dtype()) + ")");
  }
}

}  // namespace ecm::kernels
