#include "ecm/checkpoint.hpp"

#include <fstream>
#include <unordered_map>

#include "ecm/detail/binary_io.hpp"

namespace ecm {

void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os.write("ECMN", 4);
  binio::write_le<std::uint32_t>(os, kCheckpointVersion);
  binio::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, value] : tensors) {
    if (name.size() > 0xFFFF) throw IoError("parameter name too long: " + name);
    binio::write_le<std::uint16_t>(os, static_cast<std::uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    binio::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(value.dtype()));
    binio::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(value.rank()));
    for (auto e : value.shape()) binio::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(e));
    if (value.dtype() == DType::kFloat32) {
      for (float v : value.data<float>()) binio::write_f32(os, v);
    } else {
      for (double v : value.data<double>()) binio::write_f64(os, v);
    }
  }
  if (!os) throw IoError("failed writing " + path.string());
}

std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::string(magic, 4) != "ECMN") throw IoError(path.string() + ": bad checkpoint magic");
  const auto version = binio::read_le<std::uint32_t>(is, "version");
  if (version != kCheckpointVersion) throw IoError(path.string() + ": unsupported version " + std::to_string(version));
  const auto count = binio::read_le<std::uint32_t>(is, "count");
  std::vector<NamedTensor> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = binio::read_le<std::uint16_t>(is, "name length");
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw IoError(path.string() + ": truncated name");
    const auto dtype_code = binio::read_le<std::uint8_t>(is, "dtype");
    if (dtype_code > 1) throw IoError(path.string() + ": unknown dtype code " + std::to_string(dtype_code));
    const auto rank = binio::read_le<std::uint8_t>(is, "rank");
    Shape shape;
    for (std::uint8_t r = 0; r < rank; ++r) shape.push_back(binio::read_le<std::uint32_t>(is, "extent"));
    const auto dtype = static_cast<DType>(dtype_code);
    Tensor value(shape, dtype);
    if (dtype == DType::kFloat32) {
      for (auto& v : value.data<float>()) v = binio::read_f32(is, "values");
    } else {
      for (auto& v : value.data<double>()) v = binio::read_f64(is, "values");
    }
    out.push_back({std::move(name), std::move(value)});
  }
  if (is.peek() != std::char_traits<char>::eof()) throw IoError(path.string() + ": trailing bytes after checkpoint");
  return out;
}

void save_parameters(const std::filesystem::path& path, const ParameterSet& params) {
  std::vector<NamedTensor> tensors;
  for (const auto& p : params) tensors.push_back({p.name, p.value});
  write_checkpoint(path, tensors);
}

void load_parameters(const std::filesystem::path& path, ParameterSet& params) {
  auto tensors = read_checkpoint(path);
  std::unordered_map<std::string, Tensor*> by_name;
  for (auto& t : tensors) by_name[t.name] = &t.value;
  for (auto& p : params) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw IoError(path.string() + ": missing parameter " + p.name);
    if (it->second->shape() != p.value.shape()) {
      throw IoError(path.string() + ": shape mismatch for " + p.name + " (" + to_string(it->second->shape()) +
                    " vs " + to_string(p.value.shape()) + ")");
    }
    p.value = it->second->cast(p.value.dtype());
  }
}

}  // namespace ecm
