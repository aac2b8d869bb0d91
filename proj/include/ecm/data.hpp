#pragma once

// Procedural training and evaluation triplets with analytic ground truth.
// Every frame is rendered from a closed-form scene at its own time instant,
// so intermediate frames and flows need no resampling.

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ecm/io/config.hpp"
#include "ecm/synthetic.hpp"
#include "ecm/tensor.hpp"

namespace ecm {

enum class MotionKind { kTranslate, kRotate, kOcclusion };

/// Accepts "translate", "rotate" and "occlusion"; throws ConfigError("motion").
MotionKind parse_motion(const std::string& name);
std::string to_string(MotionKind kind);

/// Motion over the unit interval [0, 1].
struct Motion {
  MotionKind kind = MotionKind::kTranslate;
  // kTranslate: the whole frame; kOcclusion: the foreground patch.
  double dx = 0.0, dy = 0.0;
  // kRotate: radians, counter-clockwise in image coordinates, about the centre.
  double angle = 0.0;
  // kOcclusion: patch rectangle at time 0, half-open [x0, x0 + w) x [y0, y0 + h).
  double box_x = 0.0, box_y = 0.0, box_w = 0.0, box_h = 0.0;
};

class Scene {
 public:
  /// Background texture repeats with the frame extents, so integer
  /// translations are circular shifts.
  Scene(const Motion& motion, std::uint64_t seed, std::int64_t height, std::int64_t width,
        TextureOptions::Kind texture = TextureOptions::Kind::kNoise);

  std::array<double, 3> color(double time, double x, double y) const;
  /// Displacement between `from` and `to` of the surface visible at (x, y) at `from`.
  std::array<double, 2> flow(double from, double to, double x, double y) const;
  /// Whether that surface is still unoccluded at `to`.
  bool visible(double from, double to, double x, double y) const;

  Tensor render(double time, DType dtype) const;
  Tensor flow_field(double from, double to, DType dtype) const;

  const Motion& motion() const { return motion_; }
  std::int64_t height() const { return height_; }
  std::int64_t width() const { return width_; }

 private:
  bool in_patch(double time, double x, double y) const;

  Motion motion_;
  std::int64_t height_, width_;
  Texture background_;
  Texture foreground_;
};

struct SyntheticSample {
  Tensor frame0, frame1, frame_t;  // [1,3,H,W]
  Tensor flow01, flow10;           // [1,2,H,W]
  double t = 0.5;
  MotionKind kind = MotionKind::kTranslate;
};

SyntheticSample render_sample(const Scene& scene, double t, DType dtype = DType::kFloat64);

/// Random scene and time from `seed`. Displacements are drawn uniformly up to
/// `max_disp` pixels (for rotation, at the frame corners). Throws ConfigError
/// naming max_disp when it exceeds the search range of `config` or a quarter
/// of the smaller extent. A given `t` replaces the random time.
SyntheticSample gen_synthetic(std::uint64_t seed, MotionKind kind, std::int64_t height, std::int64_t width,
                              double max_disp, const RunConfig& config, std::optional<double> t = std::nullopt);

/// (I1, I0, 1 - t) with the flows exchanged.
SyntheticSample swap_frames(const SyntheticSample& s);
/// Mirror along x (horizontal) or y (vertical); the matching flow component flips sign.
SyntheticSample flip_horizontal(const SyntheticSample& s);
SyntheticSample flip_vertical(const SyntheticSample& s);
/// Each of the three transforms with probability 1/2.
SyntheticSample augment(const SyntheticSample& s, std::mt19937_64& rng);

struct Batch {
  Tensor frame0, frame1, frame_t, flow01;  // N-stacked
  std::vector<double> t;
};
Batch make_batch(const std::vector<SyntheticSample>& samples, DType dtype);

/// Uniform double in [0, 1) from the top 53 bits, identical on every platform.
inline double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

}  // namespace ecm
