#include "ecm/gradcheck_suite.hpp"

#include <algorithm>
#include <chrono>
#include <random>

#include "ecm/errors.hpp"
#include "ecm/estimator.hpp"
#include "ecm/losses.hpp"
#include "ecm/ops.hpp"
#include "ecm/synthesis.hpp"
#include "ecm/warp.hpp"

namespace ecm {
namespace {

constexpr DType f64 = DType::kFloat64;

Tensor uniform(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(shape, f64);
  for (auto& v : t.data<double>()) v = lo + (hi - lo) * static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return t;
}

GradcheckOptions options_for(std::uint64_t seed) {
  GradcheckOptions o;
  o.step = 1e-6;
  o.max_coords = 30;
  o.seed = seed;
  return o;
}

GradcheckResult merge(GradcheckResult a, const GradcheckResult& b) {
  a.max_rel_error = std::max(a.max_rel_error, b.max_rel_error);
  a.coords_checked += b.coords_checked;
  a.nearest_kink = std::min(a.nearest_kink, b.nearest_kink);
  return a;
}

RunConfig tiny_config(std::uint64_t seed) {
  RunConfig c;
  c.levels = 2;
  c.radius = 1;
  c.initial_downsample = 2;
  c.temperature = 2.0;
  c.encoder_width = c.upscale_width = c.context_width = c.unet_width = c.refine_width = 4;
  c.image_feature_width = 3;
  c.dtype = f64;
  c.seed = seed;
  return c;
}

// Zero-initialised heads would leave their inputs' gradients identically zero.
void randomize(ParameterSet& params, const std::vector<std::string>& fragments, std::mt19937_64& rng) {
  for (auto& p : params) {
    for (const auto& f : fragments) {
      if (p.name.find(f) != std::string::npos) p.value = uniform(p.value.shape(), rng, -0.3, 0.3);
    }
  }
}

GradcheckResult inputs_and_parameters(const GraphFn& graph, const std::vector<Tensor>& inputs, ParameterSet& params,
                                      std::uint64_t seed) {
  const GradcheckOptions o = options_for(seed);
  return merge(check_input_gradients(graph, inputs, o), check_parameter_gradients(graph, inputs, params, o));
}

std::vector<GradcheckCase> build_registry() {
  std::vector<GradcheckCase> r;
  r.push_back({"conv2d", [](std::uint64_t seed) {
                 std::mt19937_64 rng(seed);
                 // Alternate between a strided and a dilated layout.
                 const Conv2dOptions co = seed % 2 == 0 ? Conv2dOptions{2, 1, 1} : Conv2dOptions{1, 2, 2};
                 return check_input_gradients(
                     [co](Tape&, const std::vector<Var>& v) { return conv2d(v[0], v[1], v[2], co); },
                     {uniform({2, 3, 6, 7}, rng), uniform({4, 3, 3, 3}, rng), uniform({4}, rng)}, options_for(seed));
               }});
  r.push_back({"softmax", [](std::uint64_t seed) {
                 std::mt19937_64 rng(seed);
                 return check_input_gradients([](Tape&, const std::vector<Var>& v) { return softmax(v[0], 1); },
                                              {uniform({2, 5, 3, 4}, rng, -3, 3)}, options_for(seed));
               }});
  r.push_back({"backward_warp", [](std::uint64_t seed) {
                 std::mt19937_64 rng(seed);
                 return check_input_gradients([](Tape&, const std::vector<Var>& v) { return backward_warp(v[0], v[1]); },
                                              {uniform({2, 3, 5, 6}, rng), uniform({2, 2, 5, 6}, rng, -2, 2)},
                                              options_for(seed));
               }});
  r.push_back({"softmax_splat", [](std::uint64_t seed) {
                 std::mt19937_64 rng(seed);
                 return check_input_gradients(
                     [](Tape&, const std::vector<Var>& v) { return softmax_splat(v[0], v[1], v[2], 1e-8).output; },
                     {uniform({2, 3, 5, 6}, rng), uniform({2, 2, 5, 6}, rng, -2, 2), uniform({2, 1, 5, 6}, rng)},
                     options_for(seed));
               }});
  r.push_back({"splat_flow", [](std::uint64_t seed) {
                 std::mt19937_64 rng(seed);
                 return check_input_gradients(
                     [](Tape&, const std::vector<Var>& v) { return splat_flow(v[0], 0.6, v[1], 1e-8, 1e-4).flow; },
                     {uniform({1, 2, 5, 6}, rng, -1.5, 1.5), uniform({1, 1, 5, 6}, rng)}, options_for(seed));
               }});
  r.push_back({"local_correlation", [](std::uint64_t seed) {
                 std::mt19937_64 rng(seed);
                 // The masked candidates are constants far below the data; zero
                 // them so they cannot swamp the probed sum.
                 Tape probe;
                 const Tensor ones = Tensor::full({1, 3, 5, 4}, 1.0, f64);
                 Tensor valid = local_correlation(probe.constant(ones), probe.constant(ones), 2).value();
                 for (auto& v : valid.data<double>()) v = v > kMaskedCorrelation / 2 ? 1.0 : 0.0;
                 return check_input_gradients(
                     [valid](Tape& tape, const std::vector<Var>& v) {
                       return mul(local_correlation(v[0], v[1], 2), tape.constant(valid));
                     },
                     {uniform({1, 3, 5, 4}, rng), uniform({1, 3, 5, 4}, rng)}, options_for(seed));
               }});
  r.push_back({"soft_argmax_update", [](std::uint64_t seed) {
                 std::mt19937_64 rng(seed);
                 return check_input_gradients(
                     [](Tape&, const std::vector<Var>& v) { return soft_argmax_update(v[0], v[1], 2, 2.0); },
                     {uniform({1, 25, 4, 5}, rng, -2, 2), uniform({1, 2, 4, 5}, rng, -3, 3)}, options_for(seed));
               }});
  r.push_back({"rewarp_flow_to_source", [](std::uint64_t seed) {
                 std::mt19937_64 rng(seed);
                 return check_input_gradients(
                     [](Tape&, const std::vector<Var>& v) { return rewarp_flow_to_source(v[0], v[1], v[2], 1e-4); },
                     {uniform({1, 2, 5, 6}, rng, -2, 2), uniform({1, 2, 5, 6}, rng, -1.5, 1.5), uniform({1, 1, 5, 6}, rng)},
                     options_for(seed));
               }});
  r.push_back({"upscale_flow", [](std::uint64_t seed) {
                 std::mt19937_64 rng(seed);
                 ParameterSet ps;
                 const FlowEstimator est(ps, tiny_config(seed));
                 randomize(ps, {"flow.up.residual", "flow.up.weight"}, rng);
                 const GraphFn graph = [&est](Tape&, const std::vector<Var>& v) {
                   const auto up = est.upscale_flow(v[0], v[1], v[2], v[3]);
                   return concat({up.flow, up.weight}, 1);
                 };
                 return inputs_and_parameters(graph,
                                              {uniform({1, 2, 3, 4}, rng), uniform({1, 1, 3, 4}, rng),
                                               uniform({1, 4, 6, 8}, rng), uniform({1, 4, 6, 8}, rng)},
                                              ps, seed);
               }});
  r.push_back({"blend", [](std::uint64_t seed) {
                 std::mt19937_64 rng(seed);
                 return check_input_gradients(
                     [](Tape&, const std::vector<Var>& v) { return blend(v[0], v[1], v[2], v[3], v[4]).image; },
                     {uniform({1, 3, 4, 5}, rng), uniform({1, 3, 4, 5}, rng), uniform({1, 2, 4, 5}, rng, -2, 2),
                      uniform({1, 2, 4, 5}, rng, -2, 2), uniform({1, 1, 4, 5}, rng, 0, 1)},
                     options_for(seed));
               }});
  r.push_back({"intermediate_flows", [](std::uint64_t seed) {
                 std::mt19937_64 rng(seed);
                 ParameterSet ps;
                 const FrameSynthesizer syn(ps, tiny_config(seed));
                 randomize(ps, {"synth.unet.head"}, rng);
                 const GraphFn graph = [&syn](Tape&, const std::vector<Var>& v) {
                   const auto mid = syn.intermediate_flows(v[0], v[1], std::vector<double>{0.4}, v[2]);
                   return concat({mid.flow_t0, mid.flow_t1, mid.mask}, 1);
                 };
                 return inputs_and_parameters(
                     graph, {uniform({1, 2, 6, 6}, rng, -1.5, 1.5), uniform({1, 2, 6, 6}, rng, -1.5, 1.5), uniform({1, 4, 6, 6}, rng)},
                     ps, seed);
               }});
  r.push_back({"refine", [](std::uint64_t seed) {
                 std::mt19937_64 rng(seed);
                 ParameterSet ps;
                 const FrameSynthesizer syn(ps, tiny_config(seed));
                 randomize(ps, {"synth.refine.head"}, rng);
                 const GraphFn graph = [&syn](Tape&, const std::vector<Var>& v) {
                   return syn.refine(v[0], v[1], v[2], v[3], v[4], v[5]);
                 };
                 // Blended values well inside (0, 1) keep the output clamp idle.
                 return inputs_and_parameters(graph,
                                              {uniform({1, 3, 6, 6}, rng, 0.3, 0.7), uniform({1, 4, 6, 6}, rng),
                                               uniform({1, 3, 6, 6}, rng), uniform({1, 3, 6, 6}, rng),
                                               uniform({1, 2, 6, 6}, rng), uniform({1, 2, 6, 6}, rng)},
                                              ps, seed);
               }});
  r.push_back({"losses", [](std::uint64_t seed) {
                 std::mt19937_64 rng(seed);
                 return check_input_gradients(
                     [](Tape&, const std::vector<Var>& v) {
                       return loss_total(loss_blend(v[0], v[1]), loss_refine(v[2], v[1]));
                     },
                     {uniform({1, 3, 4, 5}, rng), uniform({1, 3, 4, 5}, rng), uniform({1, 3, 4, 5}, rng)},
                     options_for(seed));
               }});
  return r;
}

}  // namespace

const std::vector<GradcheckCase>& gradcheck_registry() {
  static const std::vector<GradcheckCase> registry = build_registry();
  return registry;
}

std::vector<std::string> gradcheck_names() {
  std::vector<std::string> names;
  for (const auto& c : gradcheck_registry()) names.push_back(c.name);
  return names;
}

std::vector<OpReport> run_gradcheck(const std::string& target, const SuiteOptions& options) {
  std::vector<const GradcheckCase*> chosen;
  for (const auto& c : gradcheck_registry()) {
    if (target == "all" || c.name == target) chosen.push_back(&c);
  }
  if (chosen.empty()) {
    std::string list;
    for (const auto& n : gradcheck_names()) list += (list.empty() ? "" : ", ") + n;
    throw ConfigError("op", "unknown operation '" + target + "'; registered: " + list);
  }
  std::vector<OpReport> reports;
  for (const GradcheckCase* c : chosen) {
    const auto start = std::chrono::steady_clock::now();
    OpReport rep;
    rep.name = c->name;
    for (int i = 0; i < options.max_tries && rep.seeds_clean < options.seeds; ++i) {
      const GradcheckResult res = c->run(options.first_seed + static_cast<std::uint64_t>(i));
      ++rep.seeds_tried;
      if (res.nearest_kink < options.clearance) continue;
      rep.max_rel_error = std::max(rep.max_rel_error, res.max_rel_error);
      ++rep.seeds_clean;
    }
    rep.passed = rep.seeds_clean >= options.seeds && rep.max_rel_error < options.tolerance;
    rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    reports.push_back(rep);
  }
  return reports;
}

}  // namespace ecm
