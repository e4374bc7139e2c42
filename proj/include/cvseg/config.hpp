#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "cvseg/network.hpp"
#include "cvseg/training.hpp"

namespace cvseg {

struct DataConfig {
  // ASCII "x y z r g b label" clouds; a synthetic room is generated when empty.
  std::filesystem::path train_path;
  std::filesystem::path eval_path;  // defaults to the training cloud
  Index synthetic_points = 16384;
  std::uint64_t synthetic_seed = 7;
};

struct AblationConfig {
  std::vector<std::string> presets;
  // Train OA that counts as converged in the report's epoch column.
  double convergence_oa = 0.9;
};

/// Parsed contents of an INI-style run file with sections [network],
/// [train], [data] and [ablation]. Every field starts at its default.
struct RunConfig {
  NetworkConfig network;
  TrainConfig train;
  DataConfig data;
  AblationConfig ablation;
  Index eval_points = 40960;
  std::string preset;  // optional ablation preset applied by `train`

  void validate() const;
};

struct ConfigKey {
  std::string section;
  std::string key;
  std::string doc;
};

// Every accepted key, in file order.
const std::vector<ConfigKey>& config_keys();

// Unknown sections or keys, duplicates and malformed values raise
// ConfigError naming the source and line.
RunConfig parse_config(std::string_view text, const std::string& source = "<config>");
RunConfig load_config(const std::filesystem::path& path);

// Complete file with every key, each preceded by its documentation line.
std::string format_config(const RunConfig& config);

}  // namespace cvseg
