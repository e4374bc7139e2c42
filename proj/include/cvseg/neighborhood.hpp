#pragma once

#include <cstdint>
#include <vector>

#include "cvseg/numerics/neighbor_index.hpp"
#include "cvseg/pointcloud.hpp"

namespace cvseg {

// Exact KNN of every query row against base, ties broken by smaller base
// index. A point may be its own neighbour. Throws ValidationError when
// k > base.rows() or positions are non-finite. Rows are independent, so
// `threads` > 1 splits them across worker threads without changing output.
NeighborIndex knn(const Points3<double>& query, const Points3<double>& base, Index k, int threads = 1);

// ceil(n_in / ratio) distinct indices in [0, n_in), drawn uniformly without
// replacement, returned in draw order.
std::vector<Index> random_subsample(Index n_in, Index ratio, std::uint64_t seed);

struct HierarchyLevel {
  std::vector<Index> kept;     // rows of the previous level (empty at level 0)
  std::vector<Index> source;   // rows of the original cloud
  Points3<double> positions;
  NeighborIndex neighbors;     // KNN among this level's points
  std::vector<Index> upsample; // for each previous-level point, nearest row of this level
};

/// Random 1/ratio decimation chain over a cloud. Level 0 is the cloud
/// itself; level l + 1 keeps ceil(n_l / ratio) points of level l. The
/// neighbour count at each level is min(k, n_l).
struct SamplingHierarchy {
  std::vector<HierarchyLevel> levels;

  Index depth() const { return static_cast<Index>(levels.size()) - 1; }
  Index level_size(Index l) const { return levels[static_cast<std::size_t>(l)].positions.rows(); }
};

SamplingHierarchy build_hierarchy(const PointCloud& cloud, Index levels, Index k, std::uint64_t seed,
                                  Index ratio = 4);

}  // namespace cvseg
