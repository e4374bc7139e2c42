#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "cvseg/cvlad.hpp"
#include "cvseg/lafa.hpp"
#include "cvseg/neighborhood.hpp"
#include "cvseg/pointcloud.hpp"

namespace cvseg {

struct NetworkConfig {
  Index levels = 5;
  Index k = 16;
  Index clusters = 16;
  std::vector<Index> channels{8, 32, 128, 256, 512};  // output width of each encoding level
  Index ratio = 4;
  int classes = 13;
  Index embed_width = 8;
  bool embed_xyz = false;  // feed raw positions into the input embedding next to colours
  std::vector<Index> head_widths{64, 32};
  double dropout = 0.5;
  bool vlad_normalize = false;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Structural switches used by the ablation presets.
struct ModelVariant {
  LafaVariant lafa;
  GlobalMode global = GlobalMode::kComprehensive;
};

struct EncoderLevel {
  std::array<LafaParams, 2> lafa;  // first at half the level width
};

struct Model {
  NetworkConfig config;
  ModelVariant variant;
  ParamStore store;
  MlpBlock embed;
  std::vector<EncoderLevel> encoder;
  std::vector<VladLayerParams> vlad;
  std::optional<InjectionParams> injection;
  std::vector<MlpBlock> decoder;  // index = level
  std::vector<MlpBlock> head;
  Linear logits;

  Model() = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;
};

Model build_model(const NetworkConfig& config, const ModelVariant& variant = {});

// Width of the comprehensive descriptor the model's global mode produces
// (0 without global context).
Index descriptor_width(const NetworkConfig& config, GlobalMode mode);

struct ForwardOptions {
  bool training = true;
  std::uint64_t dropout_seed = 0;
  // Called with (level, encoder output) before the output is consumed; may
  // replace the array. Used to probe skip connectivity.
  std::function<void(Index, DiffArray&)> encoder_tap;
};

struct LevelAux {
  std::array<LafaOutput, 2> lafa;
};

struct ForwardResult {
  DiffArray logits;                     // [N, classes]
  std::vector<LevelAux> aux;            // per encoding level
  std::vector<DiffArray> encoder_outputs;
  std::vector<DiffArray> decoder_inputs;  // input of each decoder mlp, by level
  std::vector<GlobalDescriptor> descriptors;  // one per batch item, empty without global context
  // offsets[l][b] is the first row of item b at level l; offsets[l].back() is the level size.
  std::vector<std::vector<Index>> offsets;
};

// The hierarchy must have config.levels - 1 subsampling steps and be built
// on `cloud`.
ForwardResult forward(Model& model, const PointCloud& cloud, const SamplingHierarchy& hierarchy,
                      const ForwardOptions& options);

// Several clouds in one pass: rows are stacked in item order, neighbourhoods
// stay within each item, batch normalization sees every item, and each item
// gets its own global descriptor. Items must share the neighbour count at
// every level (equal-sized crops always do).
ForwardResult forward(Model& model, std::span<const PointCloud> clouds, std::span<const SamplingHierarchy> hierarchies,
                      const ForwardOptions& options);

SamplingHierarchy hierarchy_for(const Model& model, const PointCloud& cloud, std::uint64_t seed);

// Argmax over the class axis, ties to the smaller class.
std::vector<int> predict(const DiffArray& logits);

Index count_parameters(const Model& model);
void save_model(const Model& model, const std::filesystem::path& path);
void load_model(Model& model, const std::filesystem::path& path);

// One line per registry entry (name, shape, trainable flag) and the total.
void print_summary(const Model& model, std::ostream& out);

}  // namespace cvseg
