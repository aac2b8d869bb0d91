#include "ecm/layers.hpp"

#include "ecm/optim.hpp"

namespace ecm {

std::uint64_t name_hash(const std::string& name) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : name) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

Conv::Conv(ParameterSet& params, const std::string& name, std::int64_t in_channels, std::int64_t out_channels,
           int kernel, Conv2dOptions options, std::uint64_t seed, DType dtype, Init init)
    : options_(options) {
  const Shape shape{out_channels, in_channels, kernel, kernel};
  Tensor w = init == Init::kZero ? Tensor(shape, dtype)
                                 : he_normal(shape, in_channels * kernel * kernel, seed ^ name_hash(name), dtype);
  weight_ = &params.add(name + ".weight", std::move(w));
  bias_ = &params.add(name + ".bias", Tensor(Shape{out_channels}, dtype));
}

Var Conv::operator()(const Var& x) const {
  if (weight_ == nullptr) throw Error("use of an unconstructed Conv layer");
  Tape& tape = x.tape();
  return conv2d(x, tape.parameter(*weight_), tape.parameter(*bias_), options_);
}

}  // namespace ecm
