#pragma once

#include <span>
#include <vector>

#include "cvseg/numerics/diff_array.hpp"

namespace cvseg {

/// rows x k table of row indices; row i lists the neighbours of query i,
/// nearest first.
struct NeighborIndex {
  Index rows = 0;
  Index k = 0;
  std::vector<Index> idx;

  NeighborIndex() = default;
  NeighborIndex(Index rows_, Index k_) : rows(rows_), k(k_), idx(static_cast<std::size_t>(rows_ * k_), 0) {}
  NeighborIndex(Index rows_, Index k_, std::vector<Index> idx_) : rows(rows_), k(k_), idx(std::move(idx_)) {}

  Index& operator()(Index i, Index j) { return idx[static_cast<std::size_t>(i * k + j)]; }
  Index operator()(Index i, Index j) const { return idx[static_cast<std::size_t>(i * k + j)]; }
  std::span<const Index> row(Index i) const {
    return std::span<const Index>(idx).subspan(static_cast<std::size_t>(i * k), static_cast<std::size_t>(k));
  }
};

}  // namespace cvseg
