#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "cvseg/errors.hpp"
#include "cvseg/kdtree.hpp"
#include "cvseg/neighborhood.hpp"
#include "cvseg/network.hpp"

using namespace cvseg;

namespace {

Points3<double> random_points(Index n, std::uint64_t seed, double grid = 0.0) {
  Rng rng(seed);
  Points3<double> p(n, 3);
  for (Index i = 0; i < n; ++i) {
    for (int d = 0; d < 3; ++d) {
      const double v = rng.uniform();
      // Snapping to a coarse grid creates many exact distance ties.
      p(i, d) = grid > 0 ? std::floor(v / grid) * grid : v;
    }
  }
  return p;
}

// O(N^2) reference with the (distance, index) order.
NeighborIndex brute_knn(const Points3<double>& q, const Points3<double>& base, Index k) {
  NeighborIndex out(q.rows(), k);
  std::vector<std::pair<double, Index>> d(static_cast<std::size_t>(base.rows()));
  for (Index i = 0; i < q.rows(); ++i) {
    for (Index j = 0; j < base.rows(); ++j) d[static_cast<std::size_t>(j)] = {(q.row(i) - base.row(j)).squaredNorm(), j};
    std::partial_sort(d.begin(), d.begin() + k, d.end());
    for (Index j = 0; j < k; ++j) out(i, j) = d[static_cast<std::size_t>(j)].second;
  }
  return out;
}

PointCloud cloud_of(const Points3<double>& p) {
  PointCloud c;
  c.positions = p;
  c.colors = Points3<double>::Constant(p.rows(), 3, 0.5);
  return c;
}

}  // namespace

TEST(Knn, SelfIsNearestForKOne) {
  const Points3<double> p = random_points(200, 1);
  const NeighborIndex nn = knn(p, p, 1);
  for (Index i = 0; i < p.rows(); ++i) EXPECT_EQ(nn(i, 0), i);
}

TEST(Knn, MatchesExhaustiveSearch) {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const Index n = 300 + 250 * static_cast<Index>(seed);
    const Points3<double> p = random_points(n, seed, seed % 2 ? 0.05 : 0.0);
    const NeighborIndex a = knn(p, p, 16);
    const NeighborIndex b = brute_knn(p, p, 16);
    EXPECT_EQ(a.idx, b.idx) << "seed " << seed;
  }
  const Points3<double> p = random_points(1000, 42);
  EXPECT_EQ(knn(p, p, 16).idx, brute_knn(p, p, 16).idx);
}

TEST(Knn, QueryAgainstDifferentBaseAndThreads) {
  const Points3<double> base = random_points(1500, 3);
  const Points3<double> q = random_points(2100, 4);
  const NeighborIndex single = knn(q, base, 8, 1);
  EXPECT_EQ(single.idx, brute_knn(q, base, 8).idx);
  EXPECT_EQ(knn(q, base, 8, 3).idx, single.idx);
}

TEST(Knn, Errors) {
  const Points3<double> p = random_points(5, 1);
  EXPECT_THROW(knn(p, p, 6), ValidationError);
  Points3<double> bad = p;
  bad(2, 1) = NAN;
  EXPECT_THROW(knn(bad, bad, 2), ValidationError);
}

TEST(Knn, DefaultNeighbourCount) { EXPECT_EQ(NetworkConfig{}.k, 16); }

TEST(KdTree, ExactWithTies) {
  const Points3<double> p = random_points(800, 9, 0.25);
  const KdTree<double> tree(p);
  std::vector<Index> out(12);
  const NeighborIndex ref = brute_knn(p, p, 12);
  for (Index i = 0; i < p.rows(); ++i) {
    tree.query(p.row(i).data(), 12, out.data());
    for (Index j = 0; j < 12; ++j) EXPECT_EQ(out[static_cast<std::size_t>(j)], ref(i, j));
  }
}

TEST(RandomSubsample, SizesAndDistinctness) {
  EXPECT_EQ(random_subsample(4, 4, 1).size(), 1u);
  EXPECT_EQ(random_subsample(40960, 4, 1).size(), 10240u);
  EXPECT_EQ(random_subsample(5, 4, 1).size(), 2u);
  const auto kept = random_subsample(1000, 3, 5);
  EXPECT_EQ(kept.size(), 334u);
  std::set<Index> s(kept.begin(), kept.end());
  EXPECT_EQ(s.size(), kept.size());
  EXPECT_GE(*s.begin(), 0);
  EXPECT_LT(*s.rbegin(), 1000);
  EXPECT_EQ(random_subsample(1000, 3, 5), kept);
}

TEST(RandomSubsample, UniformKeepFrequency) {
  const Index n = 64, trials = 10000;
  std::vector<int> hits(n, 0);
  for (Index t = 0; t < trials; ++t) {
    for (Index i : random_subsample(n, 4, static_cast<std::uint64_t>(t))) ++hits[static_cast<std::size_t>(i)];
  }
  const double p = 16.0 / 64.0;
  const double mean = trials * p;
  const double sigma = std::sqrt(trials * p * (1 - p));
  for (Index i = 0; i < n; ++i) EXPECT_LE(std::abs(hits[static_cast<std::size_t>(i)] - mean), 3 * sigma) << i;
}

TEST(Hierarchy, DefaultScheduleSizes) {
  const PointCloud c = cloud_of(random_points(40960, 2));
  const SamplingHierarchy h = build_hierarchy(c, 4, 16, 7);
  ASSERT_EQ(h.depth(), 4);
  const std::vector<Index> expected{40960, 10240, 2560, 640, 160};
  for (Index l = 0; l <= 4; ++l) EXPECT_EQ(h.level_size(l), expected[static_cast<std::size_t>(l)]);
}

TEST(Hierarchy, IdentityAtZeroLevels) {
  const PointCloud c = cloud_of(random_points(50, 2));
  const SamplingHierarchy h = build_hierarchy(c, 0, 4, 7);
  ASSERT_EQ(h.depth(), 0);
  EXPECT_EQ(h.levels[0].positions, c.positions);
  EXPECT_EQ(h.levels[0].neighbors.idx, knn(c.positions, c.positions, 4).idx);
}

TEST(Hierarchy, NestedSubsetsAndTrueNearestUpsample) {
  const PointCloud c = cloud_of(random_points(3000, 3));
  const SamplingHierarchy h = build_hierarchy(c, 3, 8, 11);
  for (Index l = 1; l <= h.depth(); ++l) {
    const HierarchyLevel& prev = h.levels[static_cast<std::size_t>(l - 1)];
    const HierarchyLevel& lev = h.levels[static_cast<std::size_t>(l)];
    EXPECT_EQ(lev.positions.rows(), (prev.positions.rows() + 3) / 4);
    std::set<Index> kept(lev.kept.begin(), lev.kept.end());
    EXPECT_EQ(kept.size(), lev.kept.size());
    std::set<Index> prev_source(prev.source.begin(), prev.source.end());
    for (std::size_t i = 0; i < lev.kept.size(); ++i) {
      EXPECT_LT(lev.kept[i], prev.positions.rows());
      EXPECT_EQ(lev.source[i], prev.source[static_cast<std::size_t>(lev.kept[i])]);
      EXPECT_TRUE(prev_source.count(lev.source[i]));
      EXPECT_EQ(lev.positions.row(static_cast<Index>(i)), c.positions.row(lev.source[i]));
    }
    ASSERT_EQ(static_cast<Index>(lev.upsample.size()), prev.positions.rows());
    for (Index i = 0; i < prev.positions.rows(); ++i) {
      const Index u = lev.upsample[static_cast<std::size_t>(i)];
      ASSERT_GE(u, 0);
      ASSERT_LT(u, lev.positions.rows());
      double best = INFINITY;
      Index arg = -1;
      for (Index j = 0; j < lev.positions.rows(); ++j) {
        const double d = (prev.positions.row(i) - lev.positions.row(j)).squaredNorm();
        if (d < best) {
          best = d;
          arg = j;
        }
      }
      EXPECT_EQ(u, arg);
    }
    EXPECT_EQ(lev.neighbors.idx, brute_knn(lev.positions, lev.positions, std::min<Index>(8, lev.positions.rows())).idx);
  }
}

TEST(Hierarchy, DeterministicAndTooSmall) {
  const PointCloud c = cloud_of(random_points(300, 4));
  const SamplingHierarchy a = build_hierarchy(c, 2, 4, 3);
  const SamplingHierarchy b = build_hierarchy(c, 2, 4, 3);
  EXPECT_EQ(a.levels[2].source, b.levels[2].source);
  EXPECT_THROW(build_hierarchy(cloud_of(random_points(255, 4)), 4, 4, 3), ValidationError);
  EXPECT_NO_THROW(build_hierarchy(cloud_of(random_points(256, 4)), 4, 4, 3));
}
