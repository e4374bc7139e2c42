#include "cvseg/lafa.hpp"

#include "cvseg/errors.hpp"

namespace cvseg {

namespace {

void check_inputs(const DiffArray& positions, const DiffArray& colors, const DiffArray& features,
                  const NeighborIndex& neighbors, const LafaParams& params) {
  const Index n = positions.rank() == 2 ? positions.dim(0) : -1;
  if (positions.rank() != 2 || positions.dim(1) != 3 || colors.rank() != 2 || colors.dim(1) != 3 ||
      colors.dim(0) != n || features.rank() != 2 || features.dim(0) != n) {
    throw DimensionError("LAFA inputs disagree: positions " + shape_string(positions.shape()) + ", colours " +
                         shape_string(colors.shape()) + ", features " + shape_string(features.shape()));
  }
  if (features.dim(1) != params.in_width) {
    throw DimensionError("LAFA expects semantic width " + std::to_string(params.in_width) + ", got " +
                         shape_string(features.shape()));
  }
  if (neighbors.rows != n) {
    throw DimensionError("neighbour table has " + std::to_string(neighbors.rows) + " rows for " +
                         std::to_string(n) + " points");
  }
  if (neighbors.k < 1) throw DimensionError("neighbour table has no columns");
}

// [N, C] centroid minus gathered [N, K, C] neighbours.
DiffArray centroid_minus_neighbors(const DiffArray& x, const DiffArray& gathered) {
  return sub(reshape(x, {x.dim(0), 1, x.dim(1)}), gathered);
}

}  // namespace

LafaParams make_lafa(ParamStore& store, const std::string& prefix, Index in_width, Index out_width,
                     const LafaVariant& variant, Rng& rng) {
  if (in_width < 1 || out_width < 1) throw ValidationError("LAFA widths must be positive");
  const LafaVariant& v = variant;
  if (v.local_encoding && !v.encode_xyz && !v.encode_rgb && !v.encode_semantic && !v.append_semantic) {
    throw ValidationError("LAFA variant encodes nothing");
  }
  if (v.adaptive_unit && !v.pool_sum && !v.pool_max) throw ValidationError("LAFA variant pools nothing");

  LafaParams p;
  p.variant = variant;
  p.in_width = in_width;
  p.out_width = out_width;
  p.encoder_width = std::max<Index>(1, out_width / 2);
  if (v.local_encoding) {
    if (v.encode_xyz) {
      p.enc_xyz = make_mlp(store, prefix + ".enc_xyz", 3, p.encoder_width, rng);
      p.internal_width += p.encoder_width;
    }
    if (v.encode_rgb) {
      p.enc_rgb = make_mlp(store, prefix + ".enc_rgb", 3, p.encoder_width, rng);
      p.internal_width += p.encoder_width;
    }
    if (v.encode_semantic) {
      p.enc_semantic = make_mlp(store, prefix + ".enc_semantic", in_width, p.encoder_width, rng);
      p.internal_width += p.encoder_width;
    }
    if (v.append_semantic) p.internal_width += in_width;
  } else {
    p.internal_width = 3 * p.encoder_width;
    p.align = make_mlp(store, prefix + ".align", in_width, p.internal_width, rng);
  }
  const Index c = p.internal_width;
  p.similarity = make_linear(store, prefix + ".similarity", c, c, false, rng);
  Index pooled = c;
  if (v.adaptive_unit) pooled = (v.pool_sum ? c : 0) + (v.pool_max ? c : 0);
  p.output = make_mlp(store, prefix + ".output", pooled, out_width, rng);
  p.offset = make_linear(store, prefix + ".offset", c, in_width, false, rng);
  return p;
}

DiffArray encode_local_info(const DiffArray& positions, const DiffArray& colors, const DiffArray& features,
                            const NeighborIndex& neighbors, LafaParams& params, const ForwardMode& mode) {
  check_inputs(positions, colors, features, neighbors, params);
  const LafaVariant& v = params.variant;
  const Index n = positions.dim(0), k = neighbors.k;
  if (!v.local_encoding) {
    DiffArray repeated = broadcast_to(reshape(features, {n, 1, params.in_width}), {n, k, params.in_width});
    return apply(*params.align, repeated, mode);
  }
  std::vector<DiffArray> parts;
  if (v.encode_xyz) {
    parts.push_back(apply(*params.enc_xyz, centroid_minus_neighbors(positions, gather_rows(positions, neighbors)), mode));
  }
  if (v.encode_rgb) {
    parts.push_back(apply(*params.enc_rgb, centroid_minus_neighbors(colors, gather_rows(colors, neighbors)), mode));
  }
  if (v.encode_semantic || v.append_semantic) {
    DiffArray gathered = gather_rows(features, neighbors);
    if (v.encode_semantic) {
      parts.push_back(apply(*params.enc_semantic, centroid_minus_neighbors(features, gathered), mode));
    }
    if (v.append_semantic) parts.push_back(gathered);
  }
  return parts.size() == 1 ? parts.front() : concat(parts, 2);
}

DiffArray adaptive_weights(const DiffArray& local_encoding, const Linear& similarity) {
  if (local_encoding.rank() != 3) {
    throw DimensionError("adaptive weights expect [N, K, C], got " + shape_string(local_encoding.shape()));
  }
  if (local_encoding.dim(1) == 0) throw DimensionError("adaptive weights over an empty neighbourhood");
  return softmax(apply(similarity, local_encoding), 1);
}

LafaOutput lafa_forward(const DiffArray& positions, const DiffArray& colors, const DiffArray& features,
                        const NeighborIndex& neighbors, LafaParams& params, const ForwardMode& mode) {
  const LafaVariant& v = params.variant;
  LafaOutput out;
  out.local_encoding = encode_local_info(positions, colors, features, neighbors, params, mode);
  const DiffArray& dl = out.local_encoding;
  const Index n = dl.dim(0), k = dl.dim(1), c = dl.dim(2);

  const bool weighted = v.adaptive_unit && v.adaptive_weight;
  out.weights = weighted ? adaptive_weights(dl, params.similarity)
                         : DiffArray::full({n, k, c}, 1.0 / static_cast<double>(k));
  const DiffArray weighted_encoding = mul(out.weights, dl);

  DiffArray pooled;
  if (!v.adaptive_unit) {
    pooled = reduce(dl, 1, ReduceMode::kMean);
  } else {
    const DiffArray& sum_input = weighted ? weighted_encoding : dl;
    // With both pools the max branch sees the raw encoding; alone it sees
    // whatever the sum branch would have seen.
    const DiffArray& max_input = v.pool_sum ? dl : sum_input;
    std::vector<DiffArray> branches;
    if (v.pool_sum) branches.push_back(reduce(sum_input, 1, ReduceMode::kSum));
    if (v.pool_max) branches.push_back(reduce(max_input, 1, ReduceMode::kMax));
    pooled = branches.size() == 1 ? branches.front() : concat(branches, 1);
  }
  out.features = apply(params.output, pooled, mode);
  out.centroid_semantic = features;
  out.neighbor_semantic = gather_rows(features, neighbors);
  out.offsets = apply(params.offset, weighted_encoding);
  return out;
}

}  // namespace cvseg
