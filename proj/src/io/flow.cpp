#include "ecm/io/flow.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

#include "ecm/detail/binary_io.hpp"

namespace ecm {

FlowField read_flo(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  const float magic = binio::read_f32(is, "flo magic");
  if (magic != kFloMagic) throw IoError(path.string() + ": bad .flo magic");
  const auto width = static_cast<std::int32_t>(binio::read_le<std::uint32_t>(is, "flo width"));
  const auto height = static_cast<std::int32_t>(binio::read_le<std::uint32_t>(is, "flo height"));
  if (width < 1 || height < 1) throw IoError(path.string() + ": invalid .flo extents");
  const auto begin = is.tellg();
  is.seekg(0, std::ios::end);
  const auto payload = static_cast<std::int64_t>(is.tellg() - begin);
  const std::int64_t expected = std::int64_t{width} * height * 2 * 4;
  if (payload != expected) {
    throw IoError(path.string() + ": payload of " + std::to_string(payload) + " bytes, expected " +
                  std::to_string(expected));
  }
  is.seekg(begin);
  FlowField flow(height, width);
  for (auto& v : flow.data) v = binio::read_f32(is, "flo values");
  return flow;
}

void write_flo(const std::filesystem::path& path, const FlowField& flow) {
  if (static_cast<std::int64_t>(flow.data.size()) != 2 * flow.height * flow.width) {
    throw IoError("write_flo: flow data does not match its extents");
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  binio::write_f32(os, kFloMagic);
  binio::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(flow.width));
  binio::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(flow.height));
  for (float v : flow.data) binio::write_f32(os, v);
  if (!os) throw IoError("failed writing " + path.string());
}

void check_flow_sanity(const FlowField& flow) {
  const double diag = std::hypot(static_cast<double>(flow.height), static_cast<double>(flow.width));
  for (std::size_t i = 0; i + 1 < flow.data.size(); i += 2) {
    const double dx = flow.data[i];
    const double dy = flow.data[i + 1];
    if (!std::isfinite(dx) || !std::isfinite(dy)) throw NumericError("flow contains non-finite values");
    if (std::hypot(dx, dy) > diag) throw NumericError("flow vector longer than the image diagonal");
  }
}

Tensor flow_to_tensor(const FlowField& flow, DType dtype) {
  const std::int64_t plane = flow.height * flow.width;
  std::vector<double> values(static_cast<std::size_t>(2 * plane));
  for (std::int64_t i = 0; i < plane; ++i) {
    values[static_cast<std::size_t>(i)] = flow.data[static_cast<std::size_t>(2 * i)];
    values[static_cast<std::size_t>(plane + i)] = flow.data[static_cast<std::size_t>(2 * i + 1)];
  }
  return Tensor::from_values(Shape{1, 2, flow.height, flow.width}, values, dtype);
}

FlowField tensor_to_flow(const Tensor& tensor, std::int64_t n) {
  if (tensor.rank() != 4 || tensor.dim(1) != 2) throw ShapeError("tensor_to_flow: expected [N,2,H,W]");
  FlowField flow(tensor.dim(2), tensor.dim(3));
  const std::int64_t plane = flow.height * flow.width;
  for (std::int64_t i = 0; i < plane; ++i) {
    flow.data[static_cast<std::size_t>(2 * i)] = static_cast<float>(tensor.at((2 * n) * plane + i));
    flow.data[static_cast<std::size_t>(2 * i + 1)] = static_cast<float>(tensor.at((2 * n + 1) * plane + i));
  }
  return flow;
}

const std::vector<std::array<double, 3>>& flow_color_wheel() {
  static const std::vector<std::array<double, 3>> wheel = [] {
    // Segment lengths red->yellow->green->cyan->blue->magenta->red.
    constexpr int kRY = 15, kYG = 6, kGC = 4, kCB = 11, kBM = 13, kMR = 6;
    std::vector<std::array<double, 3>> w;
    auto ramp = [](int i, int n) { return std::floor(255.0 * i / n); };
    for (int i = 0; i < kRY; ++i) w.push_back({255, ramp(i, kRY), 0});
    for (int i = 0; i < kYG; ++i) w.push_back({255 - ramp(i, kYG), 255, 0});
    for (int i = 0; i < kGC; ++i) w.push_back({0, 255, ramp(i, kGC)});
    for (int i = 0; i < kCB; ++i) w.push_back({0, 255 - ramp(i, kCB), 255});
    for (int i = 0; i < kBM; ++i) w.push_back({ramp(i, kBM), 0, 255});
    for (int i = 0; i < kMR; ++i) w.push_back({255, 0, 255 - ramp(i, kMR)});
    for (auto& c : w) {
      for (auto& v : c) v /= 255.0;
    }
    return w;
  }();
  return wheel;
}

ImageRGB flow_to_color(const FlowField& flow, std::optional<double> max_magnitude) {
  double max_mag = 0.0;
  if (max_magnitude) {
    max_mag = *max_magnitude;
  } else {
    for (std::size_t i = 0; i + 1 < flow.data.size(); i += 2) {
      max_mag = std::max(max_mag, std::hypot(static_cast<double>(flow.data[i]), static_cast<double>(flow.data[i + 1])));
    }
  }
  if (!(max_mag > 0.0)) max_mag = 1.0;
  const auto& wheel = flow_color_wheel();
  const auto ncols = static_cast<double>(wheel.size());
  ImageRGB out(flow.height, flow.width);
  for (std::int64_t y = 0; y < flow.height; ++y) {
    for (std::int64_t x = 0; x < flow.width; ++x) {
      const double u = flow.dx(y, x);
      const double v = flow.dy(y, x);
      const double rad = std::min(1.0, std::hypot(u, v) / max_mag);
      double turn = std::atan2(v, u) / (2.0 * std::numbers::pi);
      if (turn < 0) turn += 1.0;
      const double fk = turn * ncols;
      const auto k0 = static_cast<std::size_t>(std::floor(fk)) % wheel.size();
      const std::size_t k1 = (k0 + 1) % wheel.size();
      const double f = fk - std::floor(fk);
      for (int c = 0; c < 3; ++c) {
        const double col = (1.0 - f) * wheel[k0][static_cast<std::size_t>(c)] + f * wheel[k1][static_cast<std::size_t>(c)];
        out.at(c, y, x) = static_cast<float>(1.0 - rad * (1.0 - col));
      }
    }
  }
  return out;
}

}  // namespace ecm
