#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ecm/autograd.hpp"

namespace ecm {

// Binary parameter container, all integers little-endian:
//   "ECMN" | version u32 | count u32 |
//   count x ( name_len u16 | name bytes | dtype u8 | rank u8 | extents u32 x rank | raw values )
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor value;
};

void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path);

void save_parameters(const std::filesystem::path& path, const ParameterSet& params);
/// Loads values by name; every parameter of `params` must be present with
/// matching shape. Values are cast to each parameter's dtype.
void load_parameters(const std::filesystem::path& path, ParameterSet& params);

}  // namespace ecm
