#include "cvseg/losses.hpp"

#include "cvseg/errors.hpp"
#include "cvseg/network.hpp"

namespace cvseg {

ClassWeights ClassWeights::from_labels(std::span<const int> labels, int class_count) {
  if (class_count < 1) throw ValidationError("class weights need at least one class");
  if (labels.empty()) throw ValidationError("class weights need training labels");
  std::vector<double> counts(static_cast<std::size_t>(class_count), 0.0);
  for (int y : labels) {
    if (y < 0 || y >= class_count) throw IndexError("label " + std::to_string(y) + " outside class range");
    counts[static_cast<std::size_t>(y)] += 1.0;
  }
  const double n = static_cast<double>(labels.size());
  ClassWeights w;
  for (double c : counts) w.weights.push_back(n / (c + 0.02 * n));
  return w;
}

ClassWeights ClassWeights::uniform(int class_count) {
  return ClassWeights{std::vector<double>(static_cast<std::size_t>(class_count), 1.0)};
}

DiffArray weighted_cross_entropy(const DiffArray& logits, std::span<const int> labels, const ClassWeights& weights) {
  if (logits.rank() != 2) throw DimensionError("logits must be [N, C], got " + shape_string(logits.shape()));
  const Index n = logits.dim(0), c = logits.dim(1);
  if (static_cast<Index>(labels.size()) != n) {
    throw DimensionError(std::to_string(labels.size()) + " labels for " + std::to_string(n) + " logit rows");
  }
  if (static_cast<Index>(weights.weights.size()) != c) {
    throw DimensionError(std::to_string(weights.weights.size()) + " class weights for " + std::to_string(c) +
                         " classes");
  }
  Eigen::ArrayXd w(n);
  for (Index i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= c) {
      throw IndexError("label " + std::to_string(y) + " at point " + std::to_string(i) + " outside [0, " +
                       std::to_string(c) + ")");
    }
    w[i] = weights.weights[static_cast<std::size_t>(y)];
  }
  const DiffArray nll = pick(log_softmax(logits, 1), labels);
  return scale(mean_all(mul(nll, DiffArray({n}, std::move(w)))), -1.0);
}

namespace {

void check_semantic(const DiffArray& f, const DiffArray& nbr, const DiffArray& other, const char* what) {
  if (f.rank() != 2 || nbr.rank() != 3 || nbr.dim(0) != f.dim(0) || nbr.dim(2) != f.dim(1) ||
      other.shape() != nbr.shape()) {
    throw DimensionError(std::string("constraint loss shapes disagree: f ") + shape_string(f.shape()) +
                         ", f^k " + shape_string(nbr.shape()) + ", " + what + " " + shape_string(other.shape()));
  }
}

}  // namespace

DiffArray constraint_loss(const DiffArray& f_centroid, const DiffArray& f_neighbors, const DiffArray& weights,
                          const DiffArray& local_encoding) {
  check_semantic(f_centroid, f_neighbors, weights, "W");
  check_semantic(f_centroid, f_neighbors, local_encoding, "local encoding");
  return constraint_loss(f_centroid, f_neighbors, mul(weights, local_encoding));
}

DiffArray constraint_loss(const DiffArray& f_centroid, const DiffArray& f_neighbors, const DiffArray& offsets) {
  check_semantic(f_centroid, f_neighbors, offsets, "offsets");
  const DiffArray shifted = reduce(add(f_neighbors, offsets), 1, ReduceMode::kSum);
  return mean_all(abs(sub(f_centroid, shifted)));
}

DiffArray constraint_loss(const LafaOutput& out) {
  return constraint_loss(out.centroid_semantic, out.neighbor_semantic, out.offsets);
}

std::vector<DiffArray> level_constraints(const ForwardResult& result) {
  std::vector<DiffArray> out;
  for (const LevelAux& level : result.aux) {
    out.push_back(scale(add(constraint_loss(level.lafa[0]), constraint_loss(level.lafa[1])), 0.5));
  }
  return out;
}

DiffArray aggregation_loss(const DiffArray& wce, std::span<const DiffArray> per_level) {
  if (per_level.empty()) throw ValidationError("aggregation loss needs at least one encoding level");
  if (wce.size() != 1) throw DimensionError("cross-entropy term must be a scalar");
  DiffArray total = per_level.front();
  for (std::size_t i = 1; i < per_level.size(); ++i) total = add(total, per_level[i]);
  return add(wce, scale(total, 1.0 / static_cast<double>(per_level.size())));
}

}  // namespace cvseg
