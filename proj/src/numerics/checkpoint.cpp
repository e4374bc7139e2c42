#include "cvseg/numerics/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "cvseg/errors.hpp"

namespace cvseg {

namespace {

template <typename T>
void put_le(std::ostream& os, T value) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  U bits = std::bit_cast<U>(value);
  char buf[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
  os.write(buf, sizeof(U));
}

template <typename T>
T get_le(std::istream& is, const char* what) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  unsigned char buf[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(U))) {
    throw CheckpointError(std::string("truncated checkpoint while reading ") + what);
  }
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) bits |= static_cast<U>(buf[i]) << (8 * i);
  return std::bit_cast<T>(bits);
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedArray>& arrays) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path.string());
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  put_le<std::uint32_t>(os, kCheckpointVersion);
  put_le<std::uint64_t>(os, arrays.size());
  for (const NamedArray& a : arrays) {
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(a.name.size()));
    os.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(a.shape.size()));
    for (Index e : a.shape) put_le<std::uint64_t>(os, static_cast<std::uint64_t>(e));
    for (double v : a.values) put_le<double>(os, v);
  }
  if (!os) throw IoError("failed writing checkpoint: " + path.string());
}

std::vector<NamedArray> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path.string());
  char magic[sizeof(kCheckpointMagic)];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw CheckpointError("not a checkpoint file (bad magic): " + path.string());
  }
  const auto version = get_le<std::uint32_t>(is, "version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  const auto count = get_le<std::uint64_t>(is, "entry count");
  std::vector<NamedArray> out;
  for (std::uint64_t n = 0; n < count; ++n) {
    NamedArray a;
    const auto name_len = get_le<std::uint32_t>(is, "name length");
    a.name.resize(name_len);
    if (!is.read(a.name.data(), name_len)) throw CheckpointError("truncated checkpoint while reading name");
    const auto rank = get_le<std::uint32_t>(is, "rank");
    Index total = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      a.shape.push_back(static_cast<Index>(get_le<std::uint64_t>(is, "extent")));
      total *= a.shape.back();
    }
    a.values.resize(static_cast<std::size_t>(total));
    for (double& v : a.values) v = get_le<double>(is, "payload");
    out.push_back(std::move(a));
  }
  return out;
}

void save_checkpoint(const ParamStore& store, const std::filesystem::path& path) {
  std::vector<NamedArray> arrays;
  for (const auto& e : store.entries()) {
    arrays.push_back(NamedArray{e.name, e.array.shape(),
                                std::vector<double>(e.array.values().data(),
                                                    e.array.values().data() + e.array.size())});
  }
  write_checkpoint(path, arrays);
}

void load_checkpoint(ParamStore& store, const std::filesystem::path& path) {
  std::map<std::string, NamedArray> by_name;
  for (NamedArray& a : read_checkpoint(path)) by_name.emplace(a.name, std::move(a));
  for (const auto& e : store.entries()) {
    auto it = by_name.find(e.name);
    if (it == by_name.end()) throw CheckpointError("checkpoint lacks parameter " + e.name);
    if (it->second.shape != e.array.shape()) {
      throw CheckpointError("shape mismatch for " + e.name + ": checkpoint " + shape_string(it->second.shape) +
                            ", model " + shape_string(e.array.shape()));
    }
  }
  for (const auto& e : store.entries()) {
    const NamedArray& a = by_name.at(e.name);
    DiffArray target = e.array;
    target.values_mut() = Eigen::Map<const Eigen::ArrayXd>(a.values.data(), static_cast<Index>(a.values.size()));
  }
}

}  // namespace cvseg
