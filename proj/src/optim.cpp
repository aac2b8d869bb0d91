#include "ecm/optim.hpp"

#include <cmath>
#include <random>
#include <vector>

namespace ecm {

void adam_step(std::span<Parameter* const> params, const AdamOptions& options) {
  for (Parameter* p : params) {
    p->step += 1;
    const double c1 = 1.0 - std::pow(options.beta1, static_cast<double>(p->step));
    const double c2 = 1.0 - std::pow(options.beta2, static_cast<double>(p->step));
    dispatch(p->value.dtype(), [&](auto tag) {
      using T = typename decltype(tag)::type;
      auto value = p->value.data<T>();
      auto grad = p->grad.data<T>();
      auto m = p->first_moment.data<T>();
      auto v = p->second_moment.data<T>();
      for (std::size_t i = 0; i < value.size(); ++i) {
        const double g = grad[i];
        const double mi = options.beta1 * m[i] + (1.0 - options.beta1) * g;
        const double vi = options.beta2 * v[i] + (1.0 - options.beta2) * g * g;
        m[i] = static_cast<T>(mi);
        v[i] = static_cast<T>(vi);
        const double update = options.lr * (mi / c1) / (std::sqrt(vi / c2) + options.eps);
        value[i] = static_cast<T>(value[i] - update);
      }
    });
  }
}

void adam_step(ParameterSet& params, const AdamOptions& options) {
  std::vector<Parameter*> all;
  for (auto& p : params) all.push_back(&p);
  adam_step(all, options);
}

Tensor he_normal(const Shape& shape, std::int64_t fan_in, std::uint64_t seed, DType dtype) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  std::vector<double> values(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& v : values) v = normal(rng);
  return Tensor::from_values(shape, values, dtype);
}

}  // namespace ecm
