#pragma once

#include <span>
#include <vector>

#include "cvseg/lafa.hpp"
#include "cvseg/numerics/ops.hpp"

namespace cvseg {

struct ForwardResult;

enum class LossMode {
  kWceOnly,      // weighted cross-entropy alone
  kAggregation,  // cross-entropy plus the mean per-level constraint
};

/// w_c = N / (n_c + 0.02 N) over the training labels.
struct ClassWeights {
  std::vector<double> weights;

  static ClassWeights from_labels(std::span<const int> labels, int class_count);
  static ClassWeights uniform(int class_count);
};

// mean_i w[y_i] * -log softmax(logits_i)[y_i].
DiffArray weighted_cross_entropy(const DiffArray& logits, std::span<const int> labels, const ClassWeights& weights);

// mean over points and channels of |f_i - sum_k (f_i^k + W_i^k * dl_i^k)|.
// All of f^k, W and dl must share the semantic width of f.
DiffArray constraint_loss(const DiffArray& f_centroid, const DiffArray& f_neighbors, const DiffArray& weights,
                          const DiffArray& local_encoding);

// Same reduction with the weighted encoding already carried into semantic
// space: |f_i - sum_k (f_i^k + offset_i^k)|.
DiffArray constraint_loss(const DiffArray& f_centroid, const DiffArray& f_neighbors, const DiffArray& offsets);

DiffArray constraint_loss(const LafaOutput& out);

// One value per encoding level: the mean over the level's LAFA units.
std::vector<DiffArray> level_constraints(const ForwardResult& result);

// wce + mean of the per-level constraints.
DiffArray aggregation_loss(const DiffArray& wce, std::span<const DiffArray> per_level);

}  // namespace cvseg
