#include <gtest/gtest.h>

#include "cvseg/errors.hpp"
#include "cvseg/lafa.hpp"
#include "cvseg/neighborhood.hpp"
#include "support/gradcheck.hpp"

using namespace cvseg;
using cvseg::testing::gradcheck;
using cvseg::testing::random_uniform;
using cvseg::testing::weighted_sum;

namespace {

struct Fixture {
  Index n, k, c_in;
  DiffArray positions, colors, features;
  NeighborIndex neighbors;
  ParamStore store;
  LafaParams params;

  Fixture(Index n_, Index k_, Index c_in_, Index c_out, std::uint64_t seed, LafaVariant variant = {})
      : n(n_), k(k_), c_in(c_in_) {
    Rng rng(seed);
    positions = random_uniform({n, 3}, rng, -1, 1, false);
    colors = random_uniform({n, 3}, rng, 0, 1, false);
    features = random_uniform({n, c_in}, rng, -1, 1, false);
    Points3<double> p(n, 3);
    for (Index i = 0; i < n; ++i)
      for (int d = 0; d < 3; ++d) p(i, d) = positions.at({i, d});
    neighbors = knn(p, p, k);
    params = make_lafa(store, "lafa", c_in, c_out, variant, rng);
  }

  LafaOutput run(const DiffArray& pos, const DiffArray& col, const DiffArray& feat, const NeighborIndex& nbr) {
    return lafa_forward(pos, col, feat, nbr, params, ForwardMode{});
  }
  LafaOutput run() { return run(positions, colors, features, neighbors); }
};

DiffArray shifted(const DiffArray& x, double by) { return add(x, DiffArray::scalar(by)); }

double max_abs_diff(const DiffArray& a, const DiffArray& b) { return (a.values() - b.values()).abs().maxCoeff(); }

}  // namespace

TEST(LafaParams, WidthSplit) {
  Fixture f(20, 4, 8, 16, 1);
  EXPECT_EQ(f.params.encoder_width, 8);
  EXPECT_EQ(f.params.internal_width, 24);
  EXPECT_EQ(f.params.similarity.weight.shape(), (Shape{24, 24}));
  EXPECT_FALSE(f.params.similarity.bias.defined());
  EXPECT_EQ(f.params.output.linear.in, 48);
  EXPECT_EQ(f.params.output.linear.out, 16);
}

TEST(EncodeLocalInfo, SelfNeighboursGiveZeroDifferences) {
  Fixture f(12, 3, 5, 8, 2);
  NeighborIndex self(12, 3);
  for (Index i = 0; i < 12; ++i)
    for (Index j = 0; j < 3; ++j) self(i, j) = i;
  // Zero inputs leave only each encoder's bias response: one row repeated.
  const DiffArray dl = encode_local_info(f.positions, f.colors, f.features, self, f.params, ForwardMode{false});
  const Index c = dl.dim(2);
  for (Index r = 1; r < 12 * 3; ++r)
    for (Index ch = 0; ch < c; ++ch) EXPECT_EQ(dl[r * c + ch], dl[ch]);
}

TEST(EncodeLocalInfo, TranslationInvariant) {
  Fixture f(30, 5, 4, 8, 3);
  const DiffArray a = encode_local_info(f.positions, f.colors, f.features, f.neighbors, f.params, ForwardMode{});
  const DiffArray b =
      encode_local_info(shifted(f.positions, 3.7), f.colors, f.features, f.neighbors, f.params, ForwardMode{});
  EXPECT_LT(max_abs_diff(a, b), 1e-9);
}

TEST(EncodeLocalInfo, ShapeMismatch) {
  Fixture f(10, 3, 4, 8, 4);
  EXPECT_THROW(encode_local_info(f.positions, DiffArray::zeros({9, 3}), f.features, f.neighbors, f.params,
                                 ForwardMode{}),
               DimensionError);
  EXPECT_THROW(encode_local_info(f.positions, f.colors, DiffArray::zeros({10, 5}), f.neighbors, f.params,
                                 ForwardMode{}),
               DimensionError);
}

TEST(EncodeLocalInfo, PositionGradientMatchesFiniteDifferences) {
  Fixture f(16, 4, 4, 8, 5);
  DiffArray pos = f.positions.detach();
  pos.set_requires_grad(true);
  Rng rng(6);
  const DiffArray w = random_uniform({16, 4, f.params.internal_width}, rng, -1, 1, false);
  const auto r = gradcheck(
      [&] { return weighted_sum(encode_local_info(pos, f.colors, f.features, f.neighbors, f.params, ForwardMode{}), w); },
      {pos});
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
}

TEST(AdaptiveWeights, ConstantOverKIsUniform) {
  Rng rng(7);
  Fixture f(6, 4, 4, 8, 7);
  const Index c = f.params.internal_width;
  const DiffArray row = random_uniform({6, 1, c}, rng, -1, 1, false);
  const DiffArray w = adaptive_weights(broadcast_to(row, {6, 4, c}), f.params.similarity);
  for (Index i = 0; i < w.size(); ++i) EXPECT_NEAR(w[i], 0.25, 1e-15);
  const DiffArray one = adaptive_weights(random_uniform({6, 1, c}, rng, -1, 1, false), f.params.similarity);
  for (Index i = 0; i < one.size(); ++i) EXPECT_EQ(one[i], 1.0);
  EXPECT_THROW(adaptive_weights(DiffArray::zeros({6, 0, c}), f.params.similarity), DimensionError);
}

TEST(AdaptiveWeights, ShiftInvariantAndNormalised) {
  Rng rng(8);
  Fixture f(6, 5, 4, 8, 8);
  const Index c = f.params.internal_width;
  for (int trial = 0; trial < 20; ++trial) {
    const DiffArray dl = random_uniform({6, 5, c}, rng, -3, 3, false);
    const DiffArray w = adaptive_weights(dl, f.params.similarity);
    EXPECT_TRUE((w.values() >= 0).all());
    const DiffArray s = reduce(w, 1, ReduceMode::kSum);
    for (Index i = 0; i < s.size(); ++i) EXPECT_NEAR(s[i], 1.0, 1e-9);
    // A per-point offset constant over K shifts S by a per-(point, channel)
    // constant, since the map is linear.
    const DiffArray offset = random_uniform({6, 1, c}, rng, -5, 5, false);
    const DiffArray w2 = adaptive_weights(add(dl, offset), f.params.similarity);
    EXPECT_LT(max_abs_diff(w, w2), 1e-9);
  }
}

TEST(LafaForward, OutputShapesAndWeights) {
  Fixture f(40, 6, 5, 12, 9);
  const LafaOutput o = f.run();
  EXPECT_EQ(o.features.shape(), (Shape{40, 12}));
  EXPECT_EQ(o.weights.shape(), (Shape{40, 6, 18}));
  EXPECT_EQ(o.local_encoding.shape(), (Shape{40, 6, 18}));
  EXPECT_EQ(o.neighbor_semantic.shape(), (Shape{40, 6, 5}));
  EXPECT_EQ(o.centroid_semantic.shape(), (Shape{40, 5}));
  EXPECT_EQ(o.offsets.shape(), (Shape{40, 6, 5}));
  const DiffArray s = reduce(o.weights, 1, ReduceMode::kSum);
  for (Index i = 0; i < s.size(); ++i) EXPECT_NEAR(s[i], 1.0, 1e-9);
}

TEST(LafaForward, NeighbourPermutationInvariant) {
  Fixture f(40, 8, 5, 12, 10);
  const LafaOutput a = f.run();
  Rng rng(11);
  NeighborIndex perm = f.neighbors;
  for (Index i = 0; i < perm.rows; ++i) {
    for (Index j = perm.k - 1; j > 0; --j) std::swap(perm(i, j), perm(i, static_cast<Index>(rng.below(j + 1))));
  }
  const LafaOutput b = f.run(f.positions, f.colors, f.features, perm);
  EXPECT_LT(max_abs_diff(a.features, b.features), 1e-9);
}

TEST(LafaForward, ZeroEncodingGivesIdenticalRows) {
  Fixture f(10, 3, 4, 6, 12);
  NeighborIndex self(10, 3);
  for (Index i = 0; i < 10; ++i)
    for (Index j = 0; j < 3; ++j) self(i, j) = i;
  const LafaOutput o = lafa_forward(f.positions, f.colors, f.features, self, f.params, ForwardMode{false});
  for (Index i = 1; i < 10; ++i)
    for (Index ch = 0; ch < 6; ++ch) EXPECT_EQ(o.features.at({i, ch}), o.features.at({0, ch}));
}

TEST(LafaForward, TranslationAndShiftInvariant) {
  Fixture f(30, 6, 4, 8, 13);
  const LafaOutput a = f.run();
  const LafaOutput b = f.run(shifted(f.positions, -2.5), shifted(f.colors, 0.3), shifted(f.features, 1.7), f.neighbors);
  EXPECT_LT(max_abs_diff(a.features, b.features), 1e-9);
}

TEST(LafaForward, ParameterGradientsMatchFiniteDifferences) {
  Fixture f(16, 4, 8, 8, 14);
  Rng rng(15);
  const DiffArray w = random_uniform({16, 8}, rng, -1, 1, false);
  std::vector<DiffArray> params;
  for (const auto& e : f.store.entries()) {
    if (e.trainable) params.push_back(e.array);
  }
  const auto r = gradcheck([&] { return weighted_sum(f.run().features, w); }, params);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
}

TEST(LafaForward, InputGradientsMatchFiniteDifferences) {
  Fixture f(16, 4, 8, 8, 16);
  Rng rng(17);
  DiffArray pos = f.positions.detach(), col = f.colors.detach(), feat = f.features.detach();
  for (DiffArray* x : {&pos, &col, &feat}) x->set_requires_grad(true);
  const DiffArray w = random_uniform({16, 8}, rng, -1, 1, false);
  const auto r = gradcheck([&] { return weighted_sum(f.run(pos, col, feat, f.neighbors).features, w); }, {pos, col, feat});
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
}

TEST(LafaVariants, EveryAblationShapeRuns) {
  std::vector<LafaVariant> variants;
  LafaVariant v;
  v.adaptive_unit = false;
  variants.push_back(v);
  v = {};
  v.local_encoding = false;
  variants.push_back(v);
  v = {};
  v.encode_xyz = v.encode_rgb = false;
  variants.push_back(v);
  v = {};
  v.encode_semantic = false;
  v.append_semantic = true;
  variants.push_back(v);
  for (bool weight : {false, true}) {
    for (auto [sum, max] : {std::pair{false, true}, {true, false}, {true, true}}) {
      v = {};
      v.adaptive_weight = weight;
      v.pool_sum = sum;
      v.pool_max = max;
      variants.push_back(v);
    }
  }
  for (const LafaVariant& variant : variants) {
    Fixture f(20, 4, 6, 8, 18, variant);
    const LafaOutput o = f.run();
    EXPECT_EQ(o.features.shape(), (Shape{20, 8}));
    EXPECT_EQ(o.weights.shape(), o.local_encoding.shape());
    EXPECT_EQ(o.offsets.shape(), (Shape{20, 4, 6}));
    EXPECT_TRUE(o.features.values().isFinite().all());
  }
  LafaVariant none;
  none.encode_xyz = none.encode_rgb = none.encode_semantic = false;
  Rng rng(1);
  ParamStore store;
  EXPECT_THROW(make_lafa(store, "x", 4, 4, none, rng), ValidationError);
}

TEST(LafaVariants, MaxBranchUsesRawEncodingWhenSumIsOn) {
  // Full unit: F input = [sum_k W*dl, max_k dl]. Recompute by hand.
  Fixture f(12, 4, 4, 6, 19);
  const LafaOutput o = f.run();
  const DiffArray expected_in =
      concat({reduce(mul(o.weights, o.local_encoding), 1, ReduceMode::kSum), reduce(o.local_encoding, 1, ReduceMode::kMax)}, 1);
  const DiffArray expected = apply(f.params.output, expected_in, ForwardMode{});
  EXPECT_LT(max_abs_diff(expected, o.features), 1e-12);
}
