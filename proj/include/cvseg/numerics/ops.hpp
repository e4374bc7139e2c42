#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cvseg/numerics/diff_array.hpp"
#include "cvseg/numerics/neighbor_index.hpp"

// Differentiable operations. Every function returns a fresh array; when any
// input requires a gradient (and recording is enabled) the operation is
// recorded on the active tape.
namespace cvseg {

// [..., M, K] x [..., K, P] -> [..., M, P]; batch prefixes broadcast.
DiffArray matmul(const DiffArray& a, const DiffArray& b);

// Elementwise with numpy-style broadcasting.
DiffArray add(const DiffArray& a, const DiffArray& b);
DiffArray sub(const DiffArray& a, const DiffArray& b);
DiffArray mul(const DiffArray& a, const DiffArray& b);
DiffArray scale(const DiffArray& x, double factor);

inline DiffArray operator+(const DiffArray& a, const DiffArray& b) { return add(a, b); }
inline DiffArray operator-(const DiffArray& a, const DiffArray& b) { return sub(a, b); }
inline DiffArray operator*(const DiffArray& a, const DiffArray& b) { return mul(a, b); }
inline DiffArray operator*(double s, const DiffArray& x) { return scale(x, s); }

DiffArray leaky_relu(const DiffArray& x, double slope = 0.2);
// x / max(||x||_2, epsilon) along one axis.
DiffArray l2_normalize(const DiffArray& x, Index axis, double epsilon = 1e-12);
DiffArray abs(const DiffArray& x);

// Max-subtracted softmax / log-softmax along one axis.
DiffArray softmax(const DiffArray& x, Index axis);
DiffArray log_softmax(const DiffArray& x, Index axis);

enum class ReduceMode { kSum, kMax, kMean };

// Removes `axis` unless keepdims. Max routes the gradient to the first
// maximal element along the axis.
DiffArray reduce(const DiffArray& x, Index axis, ReduceMode mode, bool keepdims = false);
DiffArray sum_all(const DiffArray& x);
DiffArray mean_all(const DiffArray& x);

// x: [N, C], idx: R x K with entries in [0, N) -> [R, K, C].
// Backward scatter-adds into x.
DiffArray gather_rows(const DiffArray& x, const NeighborIndex& idx);
// x: [N, ...] -> [M, ...] selecting the listed leading-axis rows.
DiffArray take_rows(const DiffArray& x, std::span<const Index> rows);
// x: [N, C] -> [N] with out[i] = x[i, labels[i]].
DiffArray pick(const DiffArray& x, std::span<const int> labels);

DiffArray concat(const std::vector<DiffArray>& xs, Index axis);
DiffArray reshape(const DiffArray& x, Shape shape);
DiffArray broadcast_to(const DiffArray& x, const Shape& shape);
DiffArray transpose(const DiffArray& x);  // rank 2 only

// Running statistics of a normalization layer; updated in place by
// training-mode forwards. With an `updates` counter the averages are
// bias-corrected: update t blends the batch in at rate (1 - m) / (1 - m^t),
// so the first batch replaces the initial values outright and the stored
// numbers always equal the debiased exponential average. Without it the
// plain average m * old + (1 - m) * batch is kept.
struct NormStats {
  DiffArray mean;
  DiffArray var;
  DiffArray updates;  // [1], optional
};

struct NormOptions {
  bool training = true;
  double momentum = 0.99;
  double epsilon = 1e-6;
};

// Per-feature normalization over every axis but the last, then an affine
// gamma/beta. Training mode uses batch statistics and folds them into
// `stats`; inference uses `stats`.
DiffArray batch_norm(const DiffArray& x, const DiffArray& gamma, const DiffArray& beta,
                     NormStats& stats, const NormOptions& options);

// Inverted dropout with a mask drawn from `seed`; identity when !training.
DiffArray dropout(const DiffArray& x, double rate, std::uint64_t seed, bool training);

namespace detail {

// Registers a custom operation. `backward` receives the gradient flowing into
// `out` and is responsible for accumulating into the inputs.
void record_op(const char* name, DiffArray& out, std::initializer_list<const DiffArray*> inputs,
               std::function<void(const Eigen::ArrayXd&)> backward);

inline void accumulate(const DiffArray& target, const Eigen::ArrayXd& contribution) {
  if (target.requires_grad()) target.node()->ensure_grad() += contribution;
}

}  // namespace detail

}  // namespace cvseg
