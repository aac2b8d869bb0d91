#include "ecm/io/image.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>

namespace ecm {
namespace {

// Bit depth and colour type from the IHDR chunk, which libpng's simplified
// API hides behind its automatic conversions.
std::pair<int, int> png_header(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::array<unsigned char, 26> head{};
  if (!is.read(reinterpret_cast<char*>(head.data()), head.size())) throw IoError(path.string() + ": truncated PNG header");
  static constexpr std::array<unsigned char, 8> kSig{0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
  if (!std::equal(kSig.begin(), kSig.end(), head.begin())) throw IoError(path.string() + ": not a PNG file");
  if (std::string(reinterpret_cast<const char*>(head.data()) + 12, 4) != "IHDR") {
    throw IoError(path.string() + ": missing IHDR chunk");
  }
  return {head[24], head[25]};
}

std::uint8_t quantize(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

}  // namespace

ImageRGB read_png(const std::filesystem::path& path) {
  const auto [bit_depth, color_type] = png_header(path);
  if (bit_depth != 8) throw IoError(path.string() + ": unsupported bit depth " + std::to_string(bit_depth));
  if (color_type == PNG_COLOR_TYPE_PALETTE) throw IoError(path.string() + ": palette PNGs are not supported");

  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.string().c_str())) {
    throw IoError(path.string() + ": " + img.message);
  }
  img.format = PNG_FORMAT_RGB;
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buffer.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw IoError(path.string() + ": " + msg);
  }
  ImageRGB out(img.height, img.width);
  for (std::int64_t y = 0; y < out.height; ++y) {
    for (std::int64_t x = 0; x < out.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        out.at(c, y, x) = static_cast<float>(buffer[static_cast<std::size_t>((y * out.width + x) * 3 + c)]) / 255.0f;
      }
    }
  }
  return out;
}

void write_png(const std::filesystem::path& path, const ImageRGB& image) {
  if (image.height < 1 || image.width < 1) throw IoError("cannot write empty image " + path.string());
  std::vector<png_byte> buffer(static_cast<std::size_t>(image.height * image.width * 3));
  for (std::int64_t y = 0; y < image.height; ++y) {
    for (std::int64_t x = 0; x < image.width; ++x) {
      for (int c = 0; c < 3; ++c) buffer[static_cast<std::size_t>((y * image.width + x) * 3 + c)] = quantize(image.at(c, y, x));
    }
  }
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.string().c_str(), 0, buffer.data(), 0, nullptr)) {
    throw IoError(path.string() + ": " + img.message);
  }
}

void write_gray_png(const std::filesystem::path& path, std::int64_t height, std::int64_t width,
                    const std::vector<float>& values) {
  if (static_cast<std::int64_t>(values.size()) != height * width) throw IoError("write_gray_png: size mismatch");
  std::vector<png_byte> buffer(values.size());
  std::transform(values.begin(), values.end(), buffer.begin(), quantize);
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(width);
  img.height = static_cast<png_uint_32>(height);
  img.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&img, path.string().c_str(), 0, buffer.data(), 0, nullptr)) {
    throw IoError(path.string() + ": " + img.message);
  }
}

Tensor image_to_tensor(const ImageRGB& image, DType dtype) {
  std::vector<double> values(image.data.begin(), image.data.end());
  return Tensor::from_values(Shape{1, 3, image.height, image.width}, values, dtype);
}

ImageRGB tensor_to_image(const Tensor& tensor, std::int64_t n) {
  if (tensor.rank() != 4 || tensor.dim(1) != 3) throw ShapeError("tensor_to_image: expected [N,3,H,W]");
  ImageRGB out(tensor.dim(2), tensor.dim(3));
  const std::int64_t per = 3 * out.height * out.width;
  for (std::int64_t i = 0; i < per; ++i) out.data[static_cast<std::size_t>(i)] = static_cast<float>(tensor.at(n * per + i));
  return out;
}

}  // namespace ecm
