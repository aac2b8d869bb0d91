#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "ecm/data.hpp"
#include "ecm/synthesis.hpp"

namespace ecm {

struct StepRecord {
  int step = 0;  // 1-based
  double l_blend = 0.0;
  double l_refine = 0.0;
  double l_total = 0.0;
  double lr = 0.0;
};

struct TrainOptions {
  std::filesystem::path checkpoint;  // written after the last step unless empty
  std::filesystem::path curve_csv;   // step,l_blend,l_refine,l_total; skipped if empty
  /// Fractions of the step budget after which the rate is divided by `decay`.
  std::vector<double> milestones = {0.5, 0.75, 0.9};
  double decay = 4.0;
  bool augment = true;
  std::function<void(const StepRecord&)> on_step;
};

/// lr / decay^k where k counts milestones at or before `step` (1-based).
double learning_rate(const RunConfig& config, const TrainOptions& options, int step);

/// Seed of sample `index` in mini-batch `step`; a pure function of its inputs.
std::uint64_t sample_seed(std::uint64_t seed, std::int64_t step, std::int64_t index);

/// Mini-batch `step` of the training stream, augmented when requested.
Batch training_batch(const RunConfig& config, int step, bool augment);

/// Adam on config.steps mini-batches of config.batch_size generated samples
/// (config.motion, config.patch, config.max_disp). Throws NumericError as
/// soon as a loss is not finite.
std::vector<StepRecord> train(InterpolationModel& model, const TrainOptions& options);

/// Trailing mean over `window` entries ending at each position.
std::vector<double> moving_average(const std::vector<double>& values, std::size_t window);

}  // namespace ecm
