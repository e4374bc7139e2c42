#pragma once

#include <optional>
#include <string>

#include "cvseg/numerics/layers.hpp"
#include "cvseg/numerics/neighbor_index.hpp"

namespace cvseg {

/// Component switches of one local adaptive feature augmentation unit.
/// The defaults are the full unit; the ablation presets flip subsets.
struct LafaVariant {
  bool encode_xyz = true;
  bool encode_rgb = true;
  bool encode_semantic = true;
  // Concatenate raw neighbour semantics after the encodings (used when the
  // semantic difference encoder is switched off but features must flow).
  bool append_semantic = false;
  // false: skip difference encoding, repeat the centroid semantics over the
  // K axis and align their width with one mlp.
  bool local_encoding = true;
  // false: replace weighting and dual pooling with a plain mean over K.
  bool adaptive_unit = true;
  bool adaptive_weight = true;
  bool pool_sum = true;
  bool pool_max = true;
};

struct LafaParams {
  LafaVariant variant;
  Index in_width = 0;        // semantic input width
  Index out_width = 0;       // width of F
  Index encoder_width = 0;   // width emitted by each difference encoder
  Index internal_width = 0;  // channels of the local encoding
  std::optional<MlpBlock> enc_xyz;
  std::optional<MlpBlock> enc_rgb;
  std::optional<MlpBlock> enc_semantic;
  std::optional<MlpBlock> align;  // only when !local_encoding
  Linear similarity;              // bias-free internal -> internal
  MlpBlock output;                // pooled -> out_width
  // Bias-free internal -> in_width map that carries the weighted encoding
  // into semantic space for the constraint loss.
  Linear offset;
};

LafaParams make_lafa(ParamStore& store, const std::string& prefix, Index in_width, Index out_width,
                     const LafaVariant& variant, Rng& rng);

struct LafaOutput {
  DiffArray features;           // F: [N, out_width]
  DiffArray weights;            // W: [N, K, internal]
  DiffArray local_encoding;     // [N, K, internal]
  DiffArray neighbor_semantic;  // f^k: [N, K, in_width]
  DiffArray centroid_semantic;  // f: [N, in_width]
  DiffArray offsets;            // (W * encoding) mapped to semantic space: [N, K, in_width]
};

// Concatenated mlp encodings of centroid-minus-neighbour differences of
// position, colour and semantics: [N, K, internal_width].
DiffArray encode_local_info(const DiffArray& positions, const DiffArray& colors, const DiffArray& features,
                            const NeighborIndex& neighbors, LafaParams& params, const ForwardMode& mode);

// Softmax over the K axis of the bias-free similarity map of the encoding.
DiffArray adaptive_weights(const DiffArray& local_encoding, const Linear& similarity);

LafaOutput lafa_forward(const DiffArray& positions, const DiffArray& colors, const DiffArray& features,
                        const NeighborIndex& neighbors, LafaParams& params, const ForwardMode& mode);

}  // namespace cvseg
