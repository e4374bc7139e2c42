#include "cvseg/cvlad.hpp"

#include "cvseg/errors.hpp"

namespace cvseg {

VladLayerParams make_vlad_layer(ParamStore& store, const std::string& prefix, Index width, Index clusters, Rng& rng) {
  if (clusters < 1) throw ValidationError("VLAD needs at least one cluster");
  if (width < 1) throw ValidationError("VLAD width must be positive");
  VladLayerParams p;
  p.clusters = clusters;
  p.width = width;
  p.centers = store.add_glorot(prefix + ".centers", {clusters, width}, clusters, width, rng);
  p.assign_weight = store.add_glorot(prefix + ".assign.weight", {width, clusters}, width, clusters, rng);
  p.assign_bias = store.add_constant(prefix + ".assign.bias", {clusters}, 0.0);
  return p;
}

DiffArray soft_assignment(const DiffArray& features, const VladLayerParams& params) {
  if (features.rank() != 2 || features.dim(1) != params.width) {
    throw DimensionError("VLAD layer of width " + std::to_string(params.width) + " got features " +
                         shape_string(features.shape()));
  }
  if (features.dim(0) < 1) throw DimensionError("VLAD over an empty point set");
  return softmax(add(matmul(features, params.assign_weight), params.assign_bias), 1);
}

DiffArray vlad_layer(const DiffArray& features, const VladLayerParams& params) {
  const DiffArray a = soft_assignment(features, params);                     // [N, Q]
  const DiffArray weighted_sum = matmul(transpose(a), features);             // [Q, C]
  const DiffArray mass = reduce(a, 0, ReduceMode::kSum, false);              // [Q]
  const DiffArray shift = mul(reshape(mass, {params.clusters, 1}), params.centers);
  return reshape(sub(weighted_sum, shift), {params.clusters * params.width});
}

GlobalDescriptor cvlad_forward(std::span<const DiffArray> encoder_outputs, std::span<const VladLayerParams> params,
                               bool normalize) {
  if (encoder_outputs.empty()) throw ValidationError("C-VLAD needs at least one encoder level");
  if (encoder_outputs.size() != params.size()) {
    throw DimensionError("C-VLAD has " + std::to_string(params.size()) + " codebooks for " +
                         std::to_string(encoder_outputs.size()) + " levels");
  }
  GlobalDescriptor d;
  std::vector<DiffArray> parts;
  Index offset = 0;
  for (std::size_t l = 0; l < encoder_outputs.size(); ++l) {
    DiffArray v = vlad_layer(encoder_outputs[l], params[l]);
    if (normalize) {
      v = reshape(l2_normalize(reshape(v, {params[l].clusters, params[l].width}), 1), {v.size()});
    }
    d.slices.push_back({offset, v.size()});
    offset += v.size();
    parts.push_back(std::move(v));
  }
  d.vector = parts.size() == 1 ? parts.front() : concat(parts, 0);
  if (normalize) d.vector = l2_normalize(d.vector, 0);
  return d;
}

GlobalDescriptor global_descriptor(GlobalMode mode, std::span<const DiffArray> encoder_outputs,
                                   std::span<const VladLayerParams> params, bool normalize) {
  if (encoder_outputs.empty()) throw ValidationError("global descriptor needs encoder outputs");
  const DiffArray& last = encoder_outputs.back();
  switch (mode) {
    case GlobalMode::kNone:
      return {};
    case GlobalMode::kComprehensive:
      return cvlad_forward(encoder_outputs, params, normalize);
    case GlobalMode::kLastLayerVlad:
      if (params.empty()) throw ValidationError("last-layer VLAD needs a codebook");
      return cvlad_forward(encoder_outputs.last(1), params.last(1), normalize);
    case GlobalMode::kMaxPool:
    case GlobalMode::kMeanPool: {
      GlobalDescriptor d;
      d.vector = reduce(last, 0, mode == GlobalMode::kMaxPool ? ReduceMode::kMax : ReduceMode::kMean);
      d.slices.push_back({0, d.vector.size()});
      return d;
    }
  }
  return {};
}

InjectionParams make_injection(ParamStore& store, const std::string& prefix, Index descriptor_width,
                               Index bottleneck_width, Rng& rng) {
  InjectionParams p;
  p.descriptor_width = descriptor_width;
  p.bottleneck_width = bottleneck_width;
  p.project = make_linear(store, prefix + ".project", descriptor_width, bottleneck_width, true, rng);
  p.fuse = make_mlp(store, prefix + ".fuse", 2 * bottleneck_width, bottleneck_width, rng);
  return p;
}

DiffArray inject_global(const GlobalDescriptor& descriptor, const DiffArray& bottleneck, InjectionParams& params,
                        const ForwardMode& mode) {
  const Index offsets[2] = {0, bottleneck.rank() == 2 ? bottleneck.dim(0) : 0};
  return inject_global(std::span<const GlobalDescriptor>(&descriptor, 1), bottleneck, offsets, params, mode);
}

DiffArray inject_global(std::span<const GlobalDescriptor> descriptors, const DiffArray& bottleneck,
                        std::span<const Index> offsets, InjectionParams& params, const ForwardMode& mode) {
  if (bottleneck.rank() != 2 || bottleneck.dim(1) != params.bottleneck_width) {
    throw DimensionError("bottleneck " + shape_string(bottleneck.shape()) + " does not match width " +
                         std::to_string(params.bottleneck_width));
  }
  if (offsets.size() != descriptors.size() + 1 || offsets.front() != 0 || offsets.back() != bottleneck.dim(0)) {
    throw DimensionError("row offsets do not partition the bottleneck");
  }
  std::vector<DiffArray> tiles;
  for (std::size_t b = 0; b < descriptors.size(); ++b) {
    const GlobalDescriptor& descriptor = descriptors[b];
    if (descriptor.length() != params.descriptor_width) {
      throw DimensionError("descriptor length " + std::to_string(descriptor.length()) + " but injection expects " +
                           std::to_string(params.descriptor_width));
    }
    const Index rows = offsets[b + 1] - offsets[b];
    if (rows < 0) throw DimensionError("row offsets must be non-decreasing");
    if (rows == 0) continue;
    // A single row has no batch statistics, so the projection skips normalization.
    const DiffArray row = reshape(descriptor.vector, {1, params.descriptor_width});
    const DiffArray projected = leaky_relu(apply(params.project, row), mode.leaky_slope);
    tiles.push_back(broadcast_to(projected, {rows, params.bottleneck_width}));
  }
  const DiffArray tiled = tiles.size() == 1 ? tiles.front() : concat(tiles, 0);
  return apply(params.fuse, concat({bottleneck, tiled}, 1), mode);
}

}  // namespace cvseg
