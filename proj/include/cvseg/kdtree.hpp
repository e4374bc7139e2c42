#pragma once

#include <algorithm>
#include <numeric>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "cvseg/numerics/diff_array.hpp"

namespace cvseg {

/// Exact k-nearest-neighbour search over 3-D points. Candidates are ordered
/// by (squared distance, index), so the result matches an exhaustive sort
/// including ties. The tree keeps a reference to the points it was built on.
template <typename Scalar>
class KdTree {
 public:
  using PointMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, 3, Eigen::RowMajor>;
  using Candidate = std::pair<Scalar, Index>;

  explicit KdTree(const PointMatrix& points, Index leaf_size = 12)
      : points_(points), leaf_size_(std::max<Index>(leaf_size, 1)) {
    order_.resize(static_cast<std::size_t>(points.rows()));
    std::iota(order_.begin(), order_.end(), Index{0});
    if (points.rows() > 0) build(0, points.rows());
  }

  Index size() const { return points_.rows(); }

  // Writes the k nearest base indices of `query`, nearest first.
  void query(const Scalar* query, Index k, Index* out) const {
    std::vector<Candidate> heap;
    heap.reserve(static_cast<std::size_t>(k) + 1);
    if (!nodes_.empty() && k > 0) search(0, query, k, heap);
    std::sort_heap(heap.begin(), heap.end());
    for (std::size_t i = 0; i < heap.size(); ++i) out[i] = heap[i].second;
  }

  static Scalar squared_distance(const Scalar* a, const Scalar* b) {
    const Scalar dx = a[0] - b[0];
    const Scalar dy = a[1] - b[1];
    const Scalar dz = a[2] - b[2];
    return dx * dx + dy * dy + dz * dz;
  }

 private:
  struct Node {
    Index begin = 0, end = 0;  // range in order_ (leaves)
    int axis = -1;             // -1 marks a leaf
    Scalar split = 0;
    Index left = -1, right = -1;
  };

  Index build(Index begin, Index end) {
    const Index id = static_cast<Index>(nodes_.size());
    nodes_.push_back(Node{begin, end});
    if (end - begin <= leaf_size_) return id;
    Eigen::Matrix<Scalar, 1, 3> lo = points_.row(order_[begin]);
    Eigen::Matrix<Scalar, 1, 3> hi = lo;
    for (Index i = begin + 1; i < end; ++i) {
      lo = lo.cwiseMin(points_.row(order_[i]));
      hi = hi.cwiseMax(points_.row(order_[i]));
    }
    int axis = 0;
    (hi - lo).maxCoeff(&axis);
    if (hi[axis] == lo[axis]) return id;  // all coincident
    const Index mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](Index a, Index b) { return points_(a, axis) < points_(b, axis); });
    const Scalar split = points_(order_[mid], axis);
    const Index left = build(begin, mid);
    const Index right = build(mid, end);
    Node& n = nodes_[static_cast<std::size_t>(id)];
    n.axis = axis;
    n.split = split;
    n.left = left;
    n.right = right;
    return id;
  }

  void offer(std::vector<Candidate>& heap, Index k, Candidate c) const {
    if (static_cast<Index>(heap.size()) < k) {
      heap.push_back(c);
      std::push_heap(heap.begin(), heap.end());
    } else if (c < heap.front()) {
      std::pop_heap(heap.begin(), heap.end());
      heap.back() = c;
      std::push_heap(heap.begin(), heap.end());
    }
  }

  void search(Index id, const Scalar* q, Index k, std::vector<Candidate>& heap) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.axis < 0) {
      for (Index i = n.begin; i < n.end; ++i) {
        const Index p = order_[static_cast<std::size_t>(i)];
        offer(heap, k, {squared_distance(q, points_.row(p).data()), p});
      }
      return;
    }
    // Left holds coordinates <= split, right >= split.
    const Scalar diff = q[n.axis] - n.split;
    const Index near = diff <= 0 ? n.left : n.right;
    const Index far = diff <= 0 ? n.right : n.left;
    search(near, q, k, heap);
    // Equal distance must still be explored: a tie with a smaller index wins.
    if (static_cast<Index>(heap.size()) < k || diff * diff <= heap.front().first) search(far, q, k, heap);
  }

  const PointMatrix& points_;
  Index leaf_size_;
  std::vector<Index> order_;
  std::vector<Node> nodes_;
};

}  // namespace cvseg
