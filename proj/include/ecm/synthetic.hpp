#pragma once

// Procedural periodic textures with closed-form values at any real position,
// so translated, rotated or occluded frames need no resampling.

#include <array>
#include <cstdint>
#include <vector>

#include "ecm/tensor.hpp"

namespace ecm {

struct TextureOptions {
  enum class Kind {
    // 0.5 + amplitude * cos(phi + 2*pi*c/3) per channel c, phi a smooth random
    // field. Every pixel has the same distance from mid-grey.
    kWheel,
    // Independent-phase Fourier noise mixed into colour, clamped to [0, 1].
    kNoise,
  };
  Kind kind = Kind::kWheel;
  double period = 128.0;   // the texture repeats every `period` pixels along x
  double period_y = 0.0;   // along y; 0 reuses `period`
  int max_frequency = 6;   // in cycles per period
  int waves = 40;
  double falloff = 2.0;    // wave amplitude 1 / (1 + |k| / falloff)
  double spread = 4.0;     // kWheel: rms of phi in radians; kNoise: rms contrast * 10
  double amplitude = 0.3;  // kWheel only
};

class Texture {
 public:
  Texture(const TextureOptions& options, std::uint64_t seed);

  std::array<double, 3> at(double x, double y) const;

  /// [1,3,h,w] image whose pixel (x, y) shows the texture at (x - dx, y - dy).
  Tensor render(std::int64_t height, std::int64_t width, double dx, double dy, DType dtype) const;

 private:
  struct Wave {
    double kx, ky, phase;
    std::array<double, 3> gain;
  };
  TextureOptions options_;
  std::vector<Wave> waves_;
  double norm_ = 1.0;
};

/// out(x, y) = in((x - dx) mod W, (y - dy) mod H) on every sample of an NCHW tensor.
Tensor circular_shift(const Tensor& image, std::int64_t dx, std::int64_t dy);

}  // namespace ecm
