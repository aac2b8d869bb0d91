#include "ecm/train.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "ecm/checkpoint.hpp"
#include "ecm/errors.hpp"
#include "ecm/losses.hpp"
#include "ecm/optim.hpp"
#include "ecm/parallel.hpp"

namespace ecm {
namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::string format_row(const StepRecord& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g", r.step, r.l_blend, r.l_refine, r.l_total);
  return buf;
}

}  // namespace

double learning_rate(const RunConfig& config, const TrainOptions& options, int step) {
  double lr = config.lr;
  for (double m : options.milestones) {
    if (step > static_cast<int>(std::lround(m * config.steps))) lr /= options.decay;
  }
  return lr;
}

std::uint64_t sample_seed(std::uint64_t seed, std::int64_t step, std::int64_t index) {
  return splitmix(splitmix(splitmix(seed ^ 0x5eed) + static_cast<std::uint64_t>(step)) + static_cast<std::uint64_t>(index));
}

Batch training_batch(const RunConfig& config, int step, bool augment_samples) {
  const MotionKind kind = parse_motion(config.motion);
  std::vector<SyntheticSample> samples(static_cast<std::size_t>(config.batch_size));
  parallel_for(config.batch_size, [&](std::int64_t i) {
    const std::uint64_t seed = sample_seed(config.seed, step, i);
    SyntheticSample s = gen_synthetic(seed, kind, config.patch, config.patch, config.max_disp, config);
    if (augment_samples) {
      std::mt19937_64 rng(splitmix(seed));
      s = augment(s, rng);
    }
    samples[static_cast<std::size_t>(i)] = std::move(s);
  });
  return make_batch(samples, config.dtype);
}

std::vector<StepRecord> train(InterpolationModel& model, const TrainOptions& options) {
  const RunConfig& config = model.config();
  validate(config);
  std::ofstream csv;
  if (!options.curve_csv.empty()) {
    csv.open(options.curve_csv);
    if (!csv) throw IoError("cannot write " + options.curve_csv.string());
    csv << "step,l_blend,l_refine,l_total\n";
  }
  std::vector<StepRecord> curve;
  for (int step = 1; step <= config.steps; ++step) {
    const Batch batch = training_batch(config, step, options.augment);
    Tape tape;
    const auto out = model.interpolate(tape.constant(batch.frame0), tape.constant(batch.frame1), batch.t);
    const Var target = tape.constant(batch.frame_t);
    const Var l_blend = loss_blend(out.blend, target);
    const Var l_refine = loss_refine(out.refine, target);
    const Var total = loss_total(l_blend, l_refine);
    StepRecord rec{step, l_blend.value().at(0), l_refine.value().at(0), total.value().at(0),
                   learning_rate(config, options, step)};
    if (!std::isfinite(rec.l_total)) {
      throw NumericError("training diverged: loss is " + std::to_string(rec.l_total) + " at step " + std::to_string(step));
    }
    model.parameters().zero_grad();
    tape.backward(total);
    AdamOptions adam;
    adam.lr = rec.lr;
    adam_step(model.parameters(), adam);
    curve.push_back(rec);
    if (csv.is_open()) csv << format_row(rec) << '\n';
    if (options.on_step) options.on_step(rec);
  }
  if (!options.checkpoint.empty()) save_parameters(options.checkpoint, model.parameters());
  return curve;
}

std::vector<double> moving_average(const std::vector<double>& values, std::size_t window) {
  if (window == 0) throw Error("moving_average: window must be positive");
  std::vector<double> out(values.size());
  double run = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    run += values[i];
    if (i >= window) run -= values[i - window];
    out[i] = run / static_cast<double>(std::min(window, i + 1));
  }
  return out;
}

}  // namespace ecm
