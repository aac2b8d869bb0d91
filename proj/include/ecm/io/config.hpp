#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ecm/tensor.hpp"

namespace ecm {

/// Hyperparameters for the estimator, synthesis networks and training.
struct RunConfig {
  // Pyramid.
  int levels = 3;            // L
  int radius = 4;            // r, search radius per level
  int initial_downsample = 4;  // D_initial, encoder stride
  int level_downsample = 2;  // D_l for l > 1
  double temperature = 10.0;  // soft-argmax tau

  // Channel widths.
  int encoder_width = 32;
  int upscale_width = 32;
  int image_feature_width = 16;
  int context_width = 32;
  int unet_width = 32;
  int refine_width = 32;

  // Numerical constants.
  double splat_eps = 1e-8;
  double coverage_eps = 1e-4;

  // Training.
  std::uint64_t seed = 0;
  double lr = 1e-4;
  int batch_size = 4;
  int steps = 500;
  int patch = 64;
  double max_disp = 8.0;
  std::string motion = "translate";
  DType dtype = DType::kFloat32;

  // Inference.
  double t = 0.5;
};

/// Keys accepted in config files and as --key overrides, in display order.
const std::vector<std::string>& config_keys();

/// Sets one key from its textual value. Throws ConfigError naming the key on
/// unknown keys or unparsable values.
void set_config_value(RunConfig& config, const std::string& key, const std::string& value);
std::string get_config_value(const RunConfig& config, const std::string& key);

/// Throws ConfigError naming the first violated key.
void validate(const RunConfig& config);

/// Parses `key=value` lines ('#' starts a comment) on top of `base`.
RunConfig parse_config_text(const std::string& text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});

/// File (optional) then overrides, then validation.
RunConfig resolve_config(const std::filesystem::path& path, const std::map<std::string, std::string>& overrides);

std::string format_config(const RunConfig& config);

}  // namespace ecm
