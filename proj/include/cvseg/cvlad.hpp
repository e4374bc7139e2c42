#pragma once

#include <span>
#include <string>
#include <vector>

#include "cvseg/numerics/layers.hpp"

namespace cvseg {

/// Learned codebook of one encoder level: Q cluster centres in the level's
/// feature space plus the linear soft-assignment map.
struct VladLayerParams {
  DiffArray centers;        // [Q, C]
  DiffArray assign_weight;  // [C, Q]
  DiffArray assign_bias;    // [Q]
  Index clusters = 0;
  Index width = 0;
};

VladLayerParams make_vlad_layer(ParamStore& store, const std::string& prefix, Index width, Index clusters, Rng& rng);

// softmax over clusters of (f w + b): [N, Q].
DiffArray soft_assignment(const DiffArray& features, const VladLayerParams& params);

// Sum over points of assignment-weighted residuals to each centre,
// flattened cluster-major: [Q * C].
DiffArray vlad_layer(const DiffArray& features, const VladLayerParams& params);

struct DescriptorSlice {
  Index offset = 0;
  Index length = 0;
};

struct GlobalDescriptor {
  DiffArray vector;  // [total]
  std::vector<DescriptorSlice> slices;

  Index length() const { return vector.defined() ? vector.size() : 0; }
};

// Per-level VLAD vectors concatenated in level order. With `normalize`, each
// cluster residual is L2-normalised and then the whole vector.
GlobalDescriptor cvlad_forward(std::span<const DiffArray> encoder_outputs, std::span<const VladLayerParams> params,
                               bool normalize = false);

/// Source of the global context fed to the decoder bottleneck.
enum class GlobalMode {
  kNone,           // bottleneck passes through untouched
  kComprehensive,  // VLAD over every encoder level
  kLastLayerVlad,  // VLAD over the deepest level only
  kMaxPool,        // channel-wise max over the deepest level
  kMeanPool,       // channel-wise mean over the deepest level
};

// Descriptor for the chosen mode. `params` must hold one entry per encoder
// level for kComprehensive and at least one for kLastLayerVlad (the last is
// used).
GlobalDescriptor global_descriptor(GlobalMode mode, std::span<const DiffArray> encoder_outputs,
                                   std::span<const VladLayerParams> params, bool normalize = false);

struct InjectionParams {
  Linear project;  // descriptor -> bottleneck width, followed by leaky ReLU
  MlpBlock fuse;   // concat(bottleneck, projected) -> bottleneck width
  Index descriptor_width = 0;
  Index bottleneck_width = 0;
};

InjectionParams make_injection(ParamStore& store, const std::string& prefix, Index descriptor_width,
                               Index bottleneck_width, Rng& rng);

// Projects the descriptor once, broadcasts it to every bottleneck point,
// concatenates channel-wise and fuses back to the bottleneck width.
DiffArray inject_global(const GlobalDescriptor& descriptor, const DiffArray& bottleneck, InjectionParams& params,
                        const ForwardMode& mode);

// Batched form: rows [offsets[b], offsets[b+1]) of the bottleneck belong to
// item b and receive descriptors[b]. The fuse block normalises over all rows.
DiffArray inject_global(std::span<const GlobalDescriptor> descriptors, const DiffArray& bottleneck,
                        std::span<const Index> offsets, InjectionParams& params, const ForwardMode& mode);

}  // namespace cvseg
