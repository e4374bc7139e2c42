#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cvseg/numerics/layers.hpp"

namespace cvseg {

// Binary layout, all integers little-endian:
//   8 bytes  magic "CVSEGCKP"
//   u32      format version
//   u64      entry count
//   per entry: u32 name length, name bytes, u32 rank, u64 extents[rank],
//              f64 payload (row-major)
inline constexpr char kCheckpointMagic[8] = {'C', 'V', 'S', 'E', 'G', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedArray>& arrays);
std::vector<NamedArray> read_checkpoint(const std::filesystem::path& path);

// Saves every registry entry, trainable or not.
void save_checkpoint(const ParamStore& store, const std::filesystem::path& path);
// Overwrites registry values in place. Every registry entry must be present
// with a matching shape.
void load_checkpoint(ParamStore& store, const std::filesystem::path& path);

}  // namespace cvseg
