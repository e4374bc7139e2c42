#include "cvseg/neighborhood.hpp"

#include <numeric>
#include <thread>

#include "cvseg/errors.hpp"
#include "cvseg/kdtree.hpp"
#include "cvseg/random.hpp"

namespace cvseg {

NeighborIndex knn(const Points3<double>& query, const Points3<double>& base, Index k, int threads) {
  if (k < 1) throw ValidationError("knn needs k >= 1");
  if (k > base.rows()) {
    throw ValidationError("knn k = " + std::to_string(k) + " exceeds base size " + std::to_string(base.rows()));
  }
  if (!query.allFinite() || !base.allFinite()) throw ValidationError("knn positions must be finite");
  NeighborIndex out(query.rows(), k);
  const KdTree<double> tree(base);
  auto run = [&](Index begin, Index end) {
    for (Index i = begin; i < end; ++i) tree.query(query.row(i).data(), k, out.idx.data() + i * k);
  };
  const Index rows = query.rows();
  if (threads <= 1 || rows < 1024) {
    run(0, rows);
    return out;
  }
  std::vector<std::jthread> pool;
  const Index chunk = (rows + threads - 1) / threads;
  for (Index b = 0; b < rows; b += chunk) pool.emplace_back(run, b, std::min(rows, b + chunk));
  return out;
}

std::vector<Index> random_subsample(Index n_in, Index ratio, std::uint64_t seed) {
  if (n_in < 1) throw ValidationError("random_subsample needs n_in >= 1");
  if (ratio < 1) throw ValidationError("random_subsample needs ratio >= 1");
  const Index keep = (n_in + ratio - 1) / ratio;
  std::vector<Index> perm(static_cast<std::size_t>(n_in));
  std::iota(perm.begin(), perm.end(), Index{0});
  Rng rng(seed);
  // Partial Fisher-Yates: the first `keep` slots are a uniform sample.
  for (Index i = 0; i < keep; ++i) {
    const Index j = i + static_cast<Index>(rng.below(static_cast<std::uint64_t>(n_in - i)));
    std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
  }
  perm.resize(static_cast<std::size_t>(keep));
  return perm;
}

SamplingHierarchy build_hierarchy(const PointCloud& cloud, Index levels, Index k, std::uint64_t seed, Index ratio) {
  if (levels < 0) throw ValidationError("hierarchy depth must be non-negative");
  if (ratio < 2) throw ValidationError("sampling ratio must be at least 2");
  Index min_size = 1;
  for (Index l = 0; l < levels; ++l) min_size *= ratio;
  if (cloud.size() < min_size) {
    throw ValidationError("cloud of " + std::to_string(cloud.size()) + " points too small for " +
                          std::to_string(levels) + " levels (need " + std::to_string(min_size) + ")");
  }
  SamplingHierarchy h;
  HierarchyLevel base;
  base.source.resize(static_cast<std::size_t>(cloud.size()));
  std::iota(base.source.begin(), base.source.end(), Index{0});
  base.positions = cloud.positions;
  base.neighbors = knn(base.positions, base.positions, std::min(k, cloud.size()));
  h.levels.push_back(std::move(base));
  for (Index l = 1; l <= levels; ++l) {
    const HierarchyLevel& prev = h.levels.back();
    HierarchyLevel next;
    next.kept = random_subsample(prev.positions.rows(), ratio, mix_seed(seed, static_cast<std::uint64_t>(l)));
    next.positions.resize(static_cast<Index>(next.kept.size()), 3);
    for (std::size_t i = 0; i < next.kept.size(); ++i) {
      next.positions.row(static_cast<Index>(i)) = prev.positions.row(next.kept[i]);
      next.source.push_back(prev.source[static_cast<std::size_t>(next.kept[i])]);
    }
    next.neighbors = knn(next.positions, next.positions, std::min(k, next.positions.rows()));
    const NeighborIndex nearest = knn(prev.positions, next.positions, 1);
    next.upsample = nearest.idx;
    h.levels.push_back(std::move(next));
  }
  return h;
}

}  // namespace cvseg
