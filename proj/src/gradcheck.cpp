#include "ecm/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "ecm/kink_monitor.hpp"
#include "ecm/ops.hpp"

namespace ecm {
namespace {

Tensor random_like(const Tensor& t, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Tensor r(t.shape(), DType::kFloat64);
  for (auto& v : r.data<double>()) v = u(rng);
  return r;
}

// Records sum(R * f(inputs)) on `tape`. R is drawn on first use and reused.
Var probe(const GraphFn& f, const std::vector<Tensor>& inputs, bool inputs_require_grad, std::vector<Var>& vars,
          Tape& tape, Tensor& weights, std::mt19937_64& rng) {
  vars.clear();
  for (const auto& t : inputs) vars.push_back(inputs_require_grad ? tape.leaf(t) : tape.constant(t));
  Var out = f(tape, vars);
  if (weights.shape() != out.shape()) weights = random_like(out.value(), rng);
  return sum(mul(out, tape.constant(weights)));
}

std::vector<std::int64_t> coords_to_probe(std::int64_t n, const GradcheckOptions& options, std::mt19937_64& rng) {
  std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  if (options.max_coords > 0 && options.max_coords < n) {
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(static_cast<std::size_t>(options.max_coords));
    std::sort(idx.begin(), idx.end());
  }
  return idx;
}

double rel_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

void require_f64(const Tensor& t) {
  if (t.dtype() != DType::kFloat64) throw Error("gradcheck requires float64 tensors");
}

}  // namespace

GradcheckResult check_input_gradients(const GraphFn& f, const std::vector<Tensor>& inputs,
                                      const GradcheckOptions& options) {
  for (const auto& t : inputs) require_f64(t);
  std::mt19937_64 rng(options.seed ^ 0x9e3779b97f4a7c15ULL);
  Tensor weights;
  std::vector<Tensor> grads;
  GradcheckResult result;
  {
    Tape tape;
    std::vector<Var> vars;
    KinkMonitor kinks;
    tape.backward(probe(f, inputs, true, vars, tape, weights, rng));
    for (const auto& v : vars) grads.push_back(tape.grad(v));
    result.nearest_kink = kinks.nearest();
  }
  auto eval = [&](const std::vector<Tensor>& in) {
    Tape tape;
    std::vector<Var> vars;
    return probe(f, in, false, vars, tape, weights, rng).value().item();
  };
  std::vector<Tensor> work = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::int64_t i : coords_to_probe(inputs[k].numel(), options, rng)) {
      auto data = work[k].data<double>();
      const double orig = data[static_cast<std::size_t>(i)];
      data[static_cast<std::size_t>(i)] = orig + options.step;
      const double plus = eval(work);
      data[static_cast<std::size_t>(i)] = orig - options.step;
      const double minus = eval(work);
      data[static_cast<std::size_t>(i)] = orig;
      const double numeric = (plus - minus) / (2.0 * options.step);
      result.max_rel_error = std::max(result.max_rel_error, rel_error(grads[k].at(i), numeric, options.floor));
      ++result.coords_checked;
    }
  }
  return result;
}

GradcheckResult check_parameter_gradients(const GraphFn& f, const std::vector<Tensor>& inputs, ParameterSet& params,
                                          const GradcheckOptions& options) {
  for (const auto& p : params) require_f64(p.value);
  std::mt19937_64 rng(options.seed ^ 0x51ed270b27a3c9f1ULL);
  Tensor weights;
  params.zero_grad();
  GradcheckResult result;
  {
    Tape tape;
    std::vector<Var> vars;
    KinkMonitor kinks;
    tape.backward(probe(f, inputs, false, vars, tape, weights, rng));
    result.nearest_kink = kinks.nearest();
  }
  auto eval = [&]() {
    Tape tape;
    std::vector<Var> vars;
    return probe(f, inputs, false, vars, tape, weights, rng).value().item();
  };
  for (auto& p : params) {
    if (p.name.rfind(options.parameter_prefix, 0) != 0) continue;
    for (std::int64_t i : coords_to_probe(p.value.numel(), options, rng)) {
      auto data = p.value.data<double>();
      const double orig = data[static_cast<std::size_t>(i)];
      data[static_cast<std::size_t>(i)] = orig + options.step;
      const double plus = eval();
      data[static_cast<std::size_t>(i)] = orig - options.step;
      const double minus = eval();
      data[static_cast<std::size_t>(i)] = orig;
      const double numeric = (plus - minus) / (2.0 * options.step);
      result.max_rel_error = std::max(result.max_rel_error, rel_error(p.grad.at(i), numeric, options.floor));
      ++result.coords_checked;
    }
  }
  return result;
}

}  // namespace ecm
