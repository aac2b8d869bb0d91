#include "ecm/io/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "ecm/errors.hpp"

namespace ecm {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  if constexpr (std::is_floating_point_v<T>) {
    try {
      std::size_t used = 0;
      const double value = std::stod(text, &used);
      if (used == text.size()) return static_cast<T>(value);
    } catch (const std::exception&) {
    }
    throw ConfigError(key, "expected a number, got '" + text + "'");
  } else {
    T value{};
    const auto* last = text.data() + text.size();
    const auto r = std::from_chars(text.data(), last, value);
    if (r.ec != std::errc() || r.ptr != last) throw ConfigError(key, "expected an integer, got '" + text + "'");
    return value;
  }
}

struct Field {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T>
Field number_field(std::string key, T RunConfig::*member) {
  return Field{key,
               [key, member](RunConfig& c, const std::string& v) { c.*member = parse_number<T>(key, v); },
               [member](const RunConfig& c) {
                 // Shortest text that parses back to the same value.
                 char buf[64];
                 const auto r = std::to_chars(buf, buf + sizeof buf, c.*member);
                 return std::string(buf, r.ptr);
               }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back(number_field("L", &RunConfig::levels));
    f.push_back(number_field("r", &RunConfig::radius));
    f.push_back(number_field("D_initial", &RunConfig::initial_downsample));
    f.push_back(number_field("D", &RunConfig::level_downsample));
    f.push_back(number_field("tau", &RunConfig::temperature));
    f.push_back(number_field("encoder_width", &RunConfig::encoder_width));
    f.push_back(number_field("upscale_width", &RunConfig::upscale_width));
    f.push_back(number_field("image_feature_width", &RunConfig::image_feature_width));
    f.push_back(number_field("context_width", &RunConfig::context_width));
    f.push_back(number_field("unet_width", &RunConfig::unet_width));
    f.push_back(number_field("refine_width", &RunConfig::refine_width));
    f.push_back(number_field("splat_eps", &RunConfig::splat_eps));
    f.push_back(number_field("coverage_eps", &RunConfig::coverage_eps));
    f.push_back(number_field("seed", &RunConfig::seed));
    f.push_back(number_field("lr", &RunConfig::lr));
    f.push_back(number_field("batch_size", &RunConfig::batch_size));
    f.push_back(number_field("steps", &RunConfig::steps));
    f.push_back(number_field("patch", &RunConfig::patch));
    f.push_back(number_field("max_disp", &RunConfig::max_disp));
    f.push_back(Field{"motion", [](RunConfig& c, const std::string& v) { c.motion = v; },
                      [](const RunConfig& c) { return c.motion; }});
    f.push_back(Field{"dtype",
                      [](RunConfig& c, const std::string& v) {
                        if (v == "float32") {
                          c.dtype = DType::kFloat32;
                        } else if (v == "float64") {
                          c.dtype = DType::kFloat64;
                        } else {
                          throw ConfigError("dtype", "expected float32 or float64, got '" + v + "'");
                        }
                      },
                      [](const RunConfig& c) { return to_string(c.dtype); }});
    f.push_back(number_field("t", &RunConfig::t));
    return f;
  }();
  return table;
}

const Field& field(const std::string& key) {
  for (const auto& f : fields()) {
    if (f.key == key) return f;
  }
  throw ConfigError(key, "unknown configuration key");
}

bool is_power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& f : fields()) k.push_back(f.key);
    return k;
  }();
  return keys;
}

void set_config_value(RunConfig& config, const std::string& key, const std::string& value) {
  field(key).set(config, trim(value));
}

std::string get_config_value(const RunConfig& config, const std::string& key) { return field(key).get(config); }

void validate(const RunConfig& c) {
  auto require = [](bool ok, const char* key, const std::string& msg) {
    if (!ok) throw ConfigError(key, msg);
  };
  require(c.levels >= 1, "L", "must be >= 1");
  require(c.radius >= 1, "r", "must be >= 1");
  require(is_power_of_two(c.initial_downsample), "D_initial", "must be a power of two >= 1");
  require(c.level_downsample >= 2, "D", "must be >= 2");
  require(c.temperature > 0, "tau", "must be positive");
  require(c.encoder_width >= 1, "encoder_width", "must be >= 1");
  require(c.upscale_width >= 1, "upscale_width", "must be >= 1");
  require(c.image_feature_width >= 1, "image_feature_width", "must be >= 1");
  require(c.context_width >= 1, "context_width", "must be >= 1");
  require(c.unet_width >= 1, "unet_width", "must be >= 1");
  require(c.refine_width >= 1, "refine_width", "must be >= 1");
  require(c.splat_eps > 0, "splat_eps", "must be positive");
  require(c.coverage_eps > 0, "coverage_eps", "must be positive");
  require(c.lr > 0, "lr", "must be positive");
  require(c.batch_size >= 1, "batch_size", "must be >= 1");
  require(c.steps >= 0, "steps", "must be >= 0");
  require(c.patch >= 8, "patch", "must be >= 8");
  require(c.max_disp >= 0, "max_disp", "must be >= 0");
  require(c.motion == "translate" || c.motion == "rotate" || c.motion == "occlusion" || c.motion == "mixed", "motion",
          "expected translate, rotate, occlusion or mixed");
  require(c.t > 0.0 && c.t < 1.0, "t", "must lie in the open interval (0, 1)");
}

namespace {

RunConfig apply_lines(const std::string& text, RunConfig base) {
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno), "expected key=value, got '" + line + "'");
    }
    set_config_value(base, trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return base;
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config " + path.string());
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

}  // namespace

RunConfig parse_config_text(const std::string& text, RunConfig base) {
  RunConfig c = apply_lines(text, std::move(base));
  validate(c);
  return c;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  return parse_config_text(slurp(path), std::move(base));
}

RunConfig resolve_config(const std::filesystem::path& path, const std::map<std::string, std::string>& overrides) {
  RunConfig c;
  // File values are validated together with the overrides, so a flag can fix a file.
  if (!path.empty()) c = apply_lines(slurp(path), c);
  for (const auto& [k, v] : overrides) set_config_value(c, k, v);
  validate(c);
  return c;
}

std::string format_config(const RunConfig& config) {
  std::ostringstream os;
  for (const auto& f : fields()) os << f.key << "=" << f.get(config) << "\n";
  return os.str();
}

}  // namespace ecm
