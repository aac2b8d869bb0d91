#pragma once

#include <cstdint>
#include <filesystem>
#include <array>
#include <optional>
#include <vector>

#include "ecm/io/image.hpp"
#include "ecm/tensor.hpp"

namespace ecm {

/// Per-pixel displacement in pixels, interleaved (dx, dy) row-major.
/// dx is positive rightward, dy positive downward; flow_{0->1}(p) maps pixel
/// p of frame 0 to p + flow(p) in frame 1.
struct FlowField {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<float> data;

  FlowField() = default;
  FlowField(std::int64_t h, std::int64_t w) : height(h), width(w), data(static_cast<std::size_t>(2 * h * w), 0.0f) {}

  float& dx(std::int64_t y, std::int64_t x) { return data[static_cast<std::size_t>(2 * (y * width + x))]; }
  float& dy(std::int64_t y, std::int64_t x) { return data[static_cast<std::size_t>(2 * (y * width + x) + 1)]; }
  float dx(std::int64_t y, std::int64_t x) const { return data[static_cast<std::size_t>(2 * (y * width + x))]; }
  float dy(std::int64_t y, std::int64_t x) const { return data[static_cast<std::size_t>(2 * (y * width + x) + 1)]; }
};

inline constexpr float kFloMagic = 202021.25f;

/// Middlebury .flo: float32 magic, i32 width, i32 height, interleaved float32
/// (dx, dy) values, all little-endian.
FlowField read_flo(const std::filesystem::path& path);
void write_flo(const std::filesystem::path& path, const FlowField& flow);

/// Throws if any value is non-finite or a vector is longer than the image
/// diagonal.
void check_flow_sanity(const FlowField& flow);

/// [1, 2, H, W] tensor.
Tensor flow_to_tensor(const FlowField& flow, DType dtype);
FlowField tensor_to_flow(const Tensor& tensor, std::int64_t n = 0);

/// Colour-wheel rendering: hue from atan2(dy, dx), saturation from
/// |flow| / max_magnitude (clamped to 1); zero flow is white. Without
/// `max_magnitude` the largest magnitude in the field is used.
ImageRGB flow_to_color(const FlowField& flow, std::optional<double> max_magnitude = std::nullopt);

/// The 55-entry colour wheel (RGB in [0, 1]) used by flow_to_color; entry 0
/// is pure red and corresponds to angle 0.
const std::vector<std::array<double, 3>>& flow_color_wheel();

}  // namespace ecm
