#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "ecm/tensor.hpp"

namespace ecm {

/// Three-channel image with values in [0, 1], stored planar (C, H, W).
struct ImageRGB {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<float> data;

  ImageRGB() = default;
  ImageRGB(std::int64_t h, std::int64_t w) : height(h), width(w), data(static_cast<std::size_t>(3 * h * w), 0.0f) {}

  float& at(int c, std::int64_t y, std::int64_t x) { return data[static_cast<std::size_t>((c * height + y) * width + x)]; }
  float at(int c, std::int64_t y, std::int64_t x) const {
    return data[static_cast<std::size_t>((c * height + y) * width + x)];
  }
};

/// Reads an 8-bit grayscale, RGB or RGBA PNG; gray is replicated to three
/// channels and alpha is dropped.
ImageRGB read_png(const std::filesystem::path& path);
/// Clamps to [0, 1] and quantizes to 8-bit RGB.
void write_png(const std::filesystem::path& path, const ImageRGB& image);
/// Writes a single-channel [0, 1] map as 8-bit grayscale.
void write_gray_png(const std::filesystem::path& path, std::int64_t height, std::int64_t width,
                    const std::vector<float>& values);

/// [1, 3, H, W] tensor.
Tensor image_to_tensor(const ImageRGB& image, DType dtype);
/// Image from sample `n` of an [N, 3, H, W] tensor (values copied as-is).
ImageRGB tensor_to_image(const Tensor& tensor, std::int64_t n = 0);

}  // namespace ecm
