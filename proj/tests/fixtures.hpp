#pragma once

// Hand-set estimator weights shared by the unit and acceptance tests.

#include <cmath>
#include <cstdint>

#include "ecm/estimator.hpp"
#include "ecm/synthetic.hpp"

namespace testutil {

// Stride-1 encoder whose output channel (c, ky, kx) is the centred pixel of
// colour c at offset (ky - 1, kx - 1). The first conv keeps both signs of the
// patch in separate channels so the leaky ReLU can be undone exactly by the
// second. The level downsampler is a per-channel [1 2 1]^2 / 16 blur and
// the importance-weight head is silenced. Needs D_initial = 1, D = 2 and
// encoder_width >= 54.
inline void load_patch_encoder(ecm::ParameterSet& params, const ecm::RunConfig& config) {
  using ecm::Tensor;
  if (config.initial_downsample != 1 || config.level_downsample != 2 || config.encoder_width < 54) {
    throw ecm::Error("load_patch_encoder: needs D_initial=1, D=2 and encoder_width >= 54");
  }
  const std::int64_t width = config.encoder_width;
  auto zero = [&](const char* name) -> Tensor& {
    Tensor& t = params.at(name).value;
    t = Tensor(t.shape(), t.dtype());
    return t;
  };
  auto set = [](Tensor& t, std::int64_t i, double v) {
    ecm::dispatch(t.dtype(), [&](auto tag) {
      using T = typename decltype(tag)::type;
      t.data<T>()[static_cast<std::size_t>(i)] = static_cast<T>(v);
    });
  };
  const double slope = 0.1;
  Tensor& w_in = zero("flow.enc.in.weight");
  zero("flow.enc.in.bias");
  Tensor& w_out = zero("flow.enc.out.weight");
  zero("flow.enc.out.bias");
  for (std::int64_t c = 0; c < 3; ++c) {
    for (std::int64_t k = 0; k < 9; ++k) {
      const std::int64_t j = c * 9 + k;
      for (std::int64_t sign = 0; sign < 2; ++sign) {
        const std::int64_t ch = 2 * j + sign;
        const double s = sign == 0 ? 1.0 : -1.0;
        set(w_in, (ch * 3 + c) * 9 + k, s);
        // leaky(u) - leaky(-u) = (1 + slope) u
        set(w_out, (j * width + ch) * 9 + 4, s / (1.0 + slope));
      }
    }
  }
  Tensor& w_down = zero("flow.down.weight");
  zero("flow.down.bias");
  const double tap[3] = {1.0, 2.0, 1.0};
  for (std::int64_t c = 0; c < width; ++c)
    for (int y = 0; y < 3; ++y)
      for (int x = 0; x < 3; ++x) set(w_down, (c * width + c) * 9 + y * 3 + x, tap[y] * tap[x] / 16.0);
  zero("flow.up.weight.weight");
  zero("flow.up.weight.bias");
}

// Settings for the patch encoder. Smooth textures give shallow correlation
// peaks, so the temperature is high enough to act as a hard argmax.
inline ecm::RunConfig patch_encoder_config(int levels) {
  ecm::RunConfig c;
  c.levels = levels;
  c.initial_downsample = 1;
  c.encoder_width = 54;
  c.temperature = 1e6;
  return c;
}

// Square colour-wheel image whose hue turns once across the width and is
// constant down each column. Every pixel sits at the same distance from
// mid-grey and the correlation of two columns falls monotonically with their
// separation up to half the width, so a search window that cannot see the true
// match still leans toward it at every pyramid level. Columns being identical
// makes all vertical candidates tie, which the soft argmax averages to zero.
inline ecm::Tensor hue_ramp(std::int64_t size, double phase, ecm::DType dtype) {
  ecm::Tensor t(ecm::Shape{1, 3, size, size}, ecm::DType::kFloat64);
  auto d = t.data<double>();
  const double turn = 2.0 * 3.14159265358979323846;
  for (std::int64_t c = 0; c < 3; ++c)
    for (std::int64_t y = 0; y < size; ++y)
      for (std::int64_t x = 0; x < size; ++x)
        d[static_cast<std::size_t>((c * size + y) * size + x)] =
            0.5 + 0.3 * std::cos(turn * (static_cast<double>(x) / static_cast<double>(size) + c / 3.0) + phase);
  return t.cast(dtype);
}

inline ecm::TextureOptions wheel_options(double period) {
  ecm::TextureOptions o;
  o.kind = ecm::TextureOptions::Kind::kWheel;
  o.period = period;
  return o;
}

}  // namespace testutil
