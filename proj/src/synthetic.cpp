#include "ecm/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace ecm {

Texture::Texture(const TextureOptions& options, std::uint64_t seed) : options_(options) {
  if (options.waves < 1 || options.max_frequency < 1 || !(options.period > 0) || options.period_y < 0) {
    throw Error("Texture: waves, max_frequency and period must be positive");
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> freq(-options.max_frequency, options.max_frequency);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::normal_distribution<double> gain(0.0, 1.0);
  const double period_y = options.period_y > 0 ? options.period_y : options.period;
  const double step_x = 2.0 * std::numbers::pi / options.period;
  const double step_y = 2.0 * std::numbers::pi / period_y;
  std::array<double, 3> power{};
  while (static_cast<int>(waves_.size()) < options.waves) {
    const int kx = freq(rng);
    const int ky = freq(rng);
    const double p0 = phase(rng);
    if (kx == 0 && ky == 0) continue;
    const double amp = 1.0 / (1.0 + std::hypot(kx, ky) / options.falloff);
    Wave w{kx * step_x, ky * step_y, p0, {amp, amp, amp}};
    if (options.kind == TextureOptions::Kind::kNoise) {
      // Luminance-heavy mixing keeps the colour channels correlated.
      const double lum = gain(rng);
      for (auto& g : w.gain) g = amp * (lum + 0.5 * gain(rng));
    }
    for (int c = 0; c < 3; ++c) power[static_cast<std::size_t>(c)] += 0.5 * w.gain[static_cast<std::size_t>(c)] * w.gain[static_cast<std::size_t>(c)];
    waves_.push_back(w);
  }
  norm_ = std::sqrt((power[0] + power[1] + power[2]) / 3.0);
}

std::array<double, 3> Texture::at(double x, double y) const {
  std::array<double, 3> s{};
  for (const auto& w : waves_) {
    const double v = std::cos(w.kx * x + w.ky * y + w.phase);
    for (int c = 0; c < 3; ++c) s[static_cast<std::size_t>(c)] += w.gain[static_cast<std::size_t>(c)] * v;
  }
  std::array<double, 3> rgb{};
  if (options_.kind == TextureOptions::Kind::kWheel) {
    const double phi = options_.spread * s[0] / norm_;
    for (int c = 0; c < 3; ++c) {
      rgb[static_cast<std::size_t>(c)] = 0.5 + options_.amplitude * std::cos(phi + 2.0 * std::numbers::pi * c / 3.0);
    }
  } else {
    for (int c = 0; c < 3; ++c) {
      rgb[static_cast<std::size_t>(c)] = std::clamp(0.5 + 0.1 * options_.spread * s[static_cast<std::size_t>(c)] / norm_, 0.0, 1.0);
    }
  }
  return rgb;
}

Tensor Texture::render(std::int64_t height, std::int64_t width, double dx, double dy, DType dtype) const {
  Tensor out(Shape{1, 3, height, width}, DType::kFloat64);
  auto d = out.data<double>();
  const std::int64_t plane = height * width;
  for (std::int64_t y = 0; y < height; ++y) {
    for (std::int64_t x = 0; x < width; ++x) {
      const auto rgb = at(static_cast<double>(x) - dx, static_cast<double>(y) - dy);
      for (int c = 0; c < 3; ++c) d[static_cast<std::size_t>(c * plane + y * width + x)] = rgb[static_cast<std::size_t>(c)];
    }
  }
  return out.cast(dtype);
}

Tensor circular_shift(const Tensor& image, std::int64_t dx, std::int64_t dy) {
  if (image.rank() != 4) throw ShapeError("circular_shift: expected NCHW, got " + to_string(image.shape()));
  const std::int64_t h = image.dim(2);
  const std::int64_t w = image.dim(3);
  const std::int64_t planes = image.dim(0) * image.dim(1);
  Tensor out(image.shape(), image.dtype());
  dispatch(image.dtype(), [&](auto tag) {
    using T = typename decltype(tag)::type;
    const T* src = image.data<T>().data();
    T* dst = out.data<T>().data();
    for (std::int64_t p = 0; p < planes; ++p) {
      for (std::int64_t y = 0; y < h; ++y) {
        const std::int64_t sy = ((y - dy) % h + h) % h;
        for (std::int64_t x = 0; x < w; ++x) {
          const std::int64_t sx = ((x - dx) % w + w) % w;
          dst[(p * h + y) * w + x] = src[(p * h + sy) * w + sx];
        }
      }
    }
  });
  return out;
}

}  // namespace ecm
