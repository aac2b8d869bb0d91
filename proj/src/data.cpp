#include "ecm/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "ecm/errors.hpp"
#include "ecm/estimator.hpp"

namespace ecm {
namespace {

TextureOptions background_options(std::int64_t height, std::int64_t width, TextureOptions::Kind kind) {
  TextureOptions o;
  o.kind = kind;
  o.period = static_cast<double>(width);
  o.period_y = static_cast<double>(height);
  return o;
}

TextureOptions foreground_options(TextureOptions::Kind kind) {
  // Finer and busier than the background so the patch edge is visible.
  TextureOptions o;
  o.kind = kind;
  o.period = 32.0;
  o.max_frequency = 4;
  o.spread = 6.0;
  return o;
}

Tensor mirror(const Tensor& t, bool along_x, std::int64_t negate_channel) {
  Tensor src = t.cast(DType::kFloat64);
  Tensor out(src.shape(), DType::kFloat64);
  const auto C = src.dim(1), H = src.dim(2), W = src.dim(3);
  auto in = src.data<double>();
  auto o = out.data<double>();
  for (std::int64_t n = 0; n < src.dim(0); ++n)
    for (std::int64_t c = 0; c < C; ++c) {
      const double sign = c == negate_channel ? -1.0 : 1.0;
      for (std::int64_t y = 0; y < H; ++y)
        for (std::int64_t x = 0; x < W; ++x) {
          const std::int64_t sy = along_x ? y : H - 1 - y;
          const std::int64_t sx = along_x ? W - 1 - x : x;
          o[static_cast<std::size_t>(((n * C + c) * H + y) * W + x)] =
              sign * in[static_cast<std::size_t>(((n * C + c) * H + sy) * W + sx)];
        }
    }
  return out.cast(t.dtype());
}

Tensor stack(const std::vector<Tensor>& parts, DType dtype) {
  Shape shape = parts.front().shape();
  shape[0] = static_cast<std::int64_t>(parts.size());
  Tensor out(shape, DType::kFloat64);
  auto o = out.data<double>();
  std::size_t offset = 0;
  for (const auto& p : parts) {
    if (p.dim(0) != 1 || p.dim(1) != shape[1] || p.dim(2) != shape[2] || p.dim(3) != shape[3]) {
      throw ShapeError("make_batch: samples differ in shape");
    }
    const Tensor d = p.cast(DType::kFloat64);
    std::copy(d.data<double>().begin(), d.data<double>().end(), o.begin() + static_cast<std::ptrdiff_t>(offset));
    offset += static_cast<std::size_t>(d.numel());
  }
  return out.cast(dtype);
}

}  // namespace

MotionKind parse_motion(const std::string& name) {
  if (name == "translate") return MotionKind::kTranslate;
  if (name == "rotate") return MotionKind::kRotate;
  if (name == "occlusion") return MotionKind::kOcclusion;
  throw ConfigError("motion", "expected translate, rotate or occlusion, got '" + name + "'");
}

std::string to_string(MotionKind kind) {
  switch (kind) {
    case MotionKind::kTranslate: return "translate";
    case MotionKind::kRotate: return "rotate";
    case MotionKind::kOcclusion: return "occlusion";
  }
  return "?";
}

Scene::Scene(const Motion& motion, std::uint64_t seed, std::int64_t height, std::int64_t width,
             TextureOptions::Kind texture)
    : motion_(motion),
      height_(height),
      width_(width),
      background_(background_options(height, width, texture), seed),
      foreground_(foreground_options(texture), seed ^ 0x9e3779b97f4a7c15ULL) {
  if (height < 1 || width < 1) throw ShapeError("Scene: empty extents");
}

bool Scene::in_patch(double time, double x, double y) const {
  const double px = x - time * motion_.dx, py = y - time * motion_.dy;
  return px >= motion_.box_x && px < motion_.box_x + motion_.box_w && py >= motion_.box_y &&
         py < motion_.box_y + motion_.box_h;
}

std::array<double, 3> Scene::color(double time, double x, double y) const {
  switch (motion_.kind) {
    case MotionKind::kTranslate:
      return background_.at(x - time * motion_.dx, y - time * motion_.dy);
    case MotionKind::kRotate: {
      const double cx = 0.5 * static_cast<double>(width_ - 1), cy = 0.5 * static_cast<double>(height_ - 1);
      const double a = -time * motion_.angle;
      const double u = x - cx, v = y - cy;
      return background_.at(cx + std::cos(a) * u - std::sin(a) * v, cy + std::sin(a) * u + std::cos(a) * v);
    }
    case MotionKind::kOcclusion:
      if (in_patch(time, x, y)) return foreground_.at(x - time * motion_.dx, y - time * motion_.dy);
      return background_.at(x, y);
  }
  return {};
}

std::array<double, 2> Scene::flow(double from, double to, double x, double y) const {
  switch (motion_.kind) {
    case MotionKind::kTranslate:
      return {(to - from) * motion_.dx, (to - from) * motion_.dy};
    case MotionKind::kRotate: {
      const double cx = 0.5 * static_cast<double>(width_ - 1), cy = 0.5 * static_cast<double>(height_ - 1);
      const double a = (to - from) * motion_.angle;
      const double u = x - cx, v = y - cy;
      return {std::cos(a) * u - std::sin(a) * v - u, std::sin(a) * u + std::cos(a) * v - v};
    }
    case MotionKind::kOcclusion:
      if (in_patch(from, x, y)) return {(to - from) * motion_.dx, (to - from) * motion_.dy};
      return {0.0, 0.0};
  }
  return {};
}

bool Scene::visible(double from, double to, double x, double y) const {
  if (motion_.kind != MotionKind::kOcclusion || in_patch(from, x, y)) return true;
  return !in_patch(to, x, y);
}

Tensor Scene::render(double time, DType dtype) const {
  Tensor out(Shape{1, 3, height_, width_}, DType::kFloat64);
  auto d = out.data<double>();
  const auto plane = static_cast<std::size_t>(height_ * width_);
  for (std::int64_t y = 0; y < height_; ++y)
    for (std::int64_t x = 0; x < width_; ++x) {
      const auto rgb = color(time, static_cast<double>(x), static_cast<double>(y));
      const auto i = static_cast<std::size_t>(y * width_ + x);
      for (std::size_t c = 0; c < 3; ++c) d[c * plane + i] = rgb[c];
    }
  return out.cast(dtype);
}

Tensor Scene::flow_field(double from, double to, DType dtype) const {
  Tensor out(Shape{1, 2, height_, width_}, DType::kFloat64);
  auto d = out.data<double>();
  const auto plane = static_cast<std::size_t>(height_ * width_);
  for (std::int64_t y = 0; y < height_; ++y)
    for (std::int64_t x = 0; x < width_; ++x) {
      const auto f = flow(from, to, static_cast<double>(x), static_cast<double>(y));
      const auto i = static_cast<std::size_t>(y * width_ + x);
      d[i] = f[0];
      d[plane + i] = f[1];
    }
  return out.cast(dtype);
}

SyntheticSample render_sample(const Scene& scene, double t, DType dtype) {
  if (!(t > 0.0 && t < 1.0)) throw ConfigError("t", "must lie in (0, 1)");
  return SyntheticSample{scene.render(0.0, dtype),          scene.render(1.0, dtype),
                         scene.render(t, dtype),            scene.flow_field(0.0, 1.0, dtype),
                         scene.flow_field(1.0, 0.0, dtype), t,
                         scene.motion().kind};
}

SyntheticSample gen_synthetic(std::uint64_t seed, MotionKind kind, std::int64_t height, std::int64_t width,
                              double max_disp, const RunConfig& config, std::optional<double> t) {
  if (!(max_disp >= 0.0)) throw ConfigError("max_disp", "must be non-negative");
  const auto reach = static_cast<double>(search_range(config).back());
  if (max_disp > reach) {
    throw ConfigError("max_disp", "exceeds the search range R_L = " + std::to_string(search_range(config).back()));
  }
  if (4.0 * max_disp > static_cast<double>(std::min(height, width))) {
    throw ConfigError("max_disp", "too large for " + std::to_string(height) + "x" + std::to_string(width) +
                                      " frames (limit is a quarter of the smaller extent)");
  }
  std::mt19937_64 rng(seed);
  Motion m;
  m.kind = kind;
  const double magnitude = max_disp * unit_uniform(rng);
  const double direction = 2.0 * std::numbers::pi * unit_uniform(rng);
  m.dx = magnitude * std::cos(direction);
  m.dy = magnitude * std::sin(direction);
  if (kind == MotionKind::kRotate) {
    // Chord length 2 rho sin(a / 2) at the corners equals the drawn magnitude.
    const double rho = 0.5 * std::hypot(static_cast<double>(width - 1), static_cast<double>(height - 1));
    m.angle = 2.0 * std::asin(std::min(1.0, magnitude / (2.0 * rho))) * (direction < std::numbers::pi ? 1.0 : -1.0);
    m.dx = m.dy = 0.0;
  } else if (kind == MotionKind::kOcclusion) {
    const double w = static_cast<double>(width), h = static_cast<double>(height);
    m.box_w = w * (0.3 + 0.2 * unit_uniform(rng));
    m.box_h = h * (0.3 + 0.2 * unit_uniform(rng));
    m.box_x = (w - m.box_w) * unit_uniform(rng);
    m.box_y = (h - m.box_h) * unit_uniform(rng);
  }
  double time = 0.0;
  while (time == 0.0) time = unit_uniform(rng);
  return render_sample(Scene(m, rng(), height, width), t.value_or(time), config.dtype);
}

SyntheticSample swap_frames(const SyntheticSample& s) {
  return SyntheticSample{s.frame1, s.frame0, s.frame_t, s.flow10, s.flow01, 1.0 - s.t, s.kind};
}

SyntheticSample flip_horizontal(const SyntheticSample& s) {
  return SyntheticSample{mirror(s.frame0, true, -1), mirror(s.frame1, true, -1), mirror(s.frame_t, true, -1),
                         mirror(s.flow01, true, 0),  mirror(s.flow10, true, 0),  s.t,
                         s.kind};
}

SyntheticSample flip_vertical(const SyntheticSample& s) {
  return SyntheticSample{mirror(s.frame0, false, -1), mirror(s.frame1, false, -1), mirror(s.frame_t, false, -1),
                         mirror(s.flow01, false, 1),  mirror(s.flow10, false, 1),  s.t,
                         s.kind};
}

SyntheticSample augment(const SyntheticSample& s, std::mt19937_64& rng) {
  SyntheticSample out = s;
  // Draw all three coins up front so the stream position is fixed.
  const bool h = rng() & 1, v = rng() & 1, swap = rng() & 1;
  if (h) out = flip_horizontal(out);
  if (v) out = flip_vertical(out);
  if (swap) out = swap_frames(out);
  return out;
}

Batch make_batch(const std::vector<SyntheticSample>& samples, DType dtype) {
  if (samples.empty()) throw ShapeError("make_batch: no samples");
  std::vector<Tensor> f0, f1, ft, fl;
  Batch b;
  for (const auto& s : samples) {
    f0.push_back(s.frame0);
    f1.push_back(s.frame1);
    ft.push_back(s.frame_t);
    fl.push_back(s.flow01);
    b.t.push_back(s.t);
  }
  b.frame0 = stack(f0, dtype);
  b.frame1 = stack(f1, dtype);
  b.frame_t = stack(ft, dtype);
  b.flow01 = stack(fl, dtype);
  return b;
}

}  // namespace ecm
