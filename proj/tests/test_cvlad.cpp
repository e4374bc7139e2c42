#include <gtest/gtest.h>

#include <cmath>

#include "cvseg/cvlad.hpp"
#include "cvseg/errors.hpp"
#include "support/gradcheck.hpp"

using namespace cvseg;
using cvseg::testing::gradcheck;
using cvseg::testing::random_uniform;
using cvseg::testing::weighted_sum;

namespace {

double max_abs_diff(const DiffArray& a, const DiffArray& b) { return (a.values() - b.values()).abs().maxCoeff(); }

// Explicit loops: softmax of f w + b per point, then residual sums.
std::vector<double> vlad_oracle(const DiffArray& f, const VladLayerParams& p) {
  const Index n = f.dim(0), c = p.width, q = p.clusters;
  std::vector<double> v(static_cast<std::size_t>(q * c), 0.0);
  for (Index i = 0; i < n; ++i) {
    std::vector<double> logit(static_cast<std::size_t>(q));
    double mx = -INFINITY;
    for (Index j = 0; j < q; ++j) {
      double s = p.assign_bias[j];
      for (Index ch = 0; ch < c; ++ch) s += f.at({i, ch}) * p.assign_weight.at({ch, j});
      logit[static_cast<std::size_t>(j)] = s;
      mx = std::max(mx, s);
    }
    double z = 0;
    for (double& s : logit) z += (s = std::exp(s - mx));
    for (Index j = 0; j < q; ++j) {
      const double a = logit[static_cast<std::size_t>(j)] / z;
      for (Index ch = 0; ch < c; ++ch) v[static_cast<std::size_t>(j * c + ch)] += a * (f.at({i, ch}) - p.centers.at({j, ch}));
    }
  }
  return v;
}

}  // namespace

TEST(VladLayer, SinglePointSingleCluster) {
  Rng rng(1);
  ParamStore store;
  const VladLayerParams p = make_vlad_layer(store, "v", 5, 1, rng);
  const DiffArray f = random_uniform({1, 5}, rng, -1, 1, false);
  const DiffArray v = vlad_layer(f, p);
  ASSERT_EQ(v.shape(), (Shape{5}));
  for (Index ch = 0; ch < 5; ++ch) EXPECT_EQ(v[ch], f[ch] - p.centers[ch]);
}

TEST(VladLayer, AssignmentsSumToOne) {
  Rng rng(2);
  ParamStore store;
  const VladLayerParams p = make_vlad_layer(store, "v", 6, 7, rng);
  const DiffArray a = soft_assignment(random_uniform({50, 6}, rng, -4, 4, false), p);
  ASSERT_EQ(a.shape(), (Shape{50, 7}));
  EXPECT_TRUE((a.values() >= 0).all());
  const DiffArray s = reduce(a, 1, ReduceMode::kSum);
  for (Index i = 0; i < 50; ++i) EXPECT_NEAR(s[i], 1.0, 1e-12);
}

TEST(VladLayer, MatchesDoubleLoop) {
  Rng rng(3);
  ParamStore store;
  const VladLayerParams p = make_vlad_layer(store, "v", 8, 4, rng);
  const DiffArray f = random_uniform({64, 8}, rng, -2, 2, false);
  const DiffArray v = vlad_layer(f, p);
  const std::vector<double> ref = vlad_oracle(f, p);
  ASSERT_EQ(v.size(), 32);
  for (Index i = 0; i < 32; ++i) EXPECT_NEAR(v[i], ref[static_cast<std::size_t>(i)], 1e-9);
}

TEST(VladLayer, PointPermutationInvariant) {
  Rng rng(4);
  ParamStore store;
  const VladLayerParams p = make_vlad_layer(store, "v", 8, 4, rng);
  const DiffArray f = random_uniform({40, 8}, rng, -2, 2, false);
  std::vector<Index> perm(40);
  for (Index i = 0; i < 40; ++i) perm[static_cast<std::size_t>(i)] = (i * 17 + 3) % 40;
  EXPECT_LT(max_abs_diff(vlad_layer(f, p), vlad_layer(take_rows(f, perm), p)), 1e-12);
}

TEST(VladLayer, ResidualsVanishAtTheCentres) {
  Rng rng(5);
  ParamStore store;
  const VladLayerParams p = make_vlad_layer(store, "v", 4, 3, rng);
  const DiffArray point = random_uniform({1, 4}, rng, -1, 1, false);
  for (Index j = 0; j < 3; ++j)
    for (Index ch = 0; ch < 4; ++ch) p.centers.node()->value[j * 4 + ch] = point[ch];
  const DiffArray f = broadcast_to(point, {10, 4});
  const DiffArray v = vlad_layer(f, p);
  for (Index i = 0; i < v.size(); ++i) EXPECT_NEAR(v[i], 0.0, 1e-14);
}

TEST(VladLayer, WidthMismatch) {
  Rng rng(6);
  ParamStore store;
  const VladLayerParams p = make_vlad_layer(store, "v", 4, 3, rng);
  EXPECT_THROW(vlad_layer(DiffArray::zeros({5, 5}), p), DimensionError);
}

TEST(VladLayer, GradientsMatchFiniteDifferences) {
  Rng rng(7);
  ParamStore store;
  const VladLayerParams p = make_vlad_layer(store, "v", 5, 3, rng);
  const DiffArray f = random_uniform({12, 5}, rng, -1, 1);
  const DiffArray w = random_uniform({15}, rng, -1, 1, false);
  const auto r = gradcheck([&] { return weighted_sum(vlad_layer(f, p), w); },
                           {f, p.centers, p.assign_weight, p.assign_bias});
  EXPECT_LT(r.max_rel_error, 1e-5) << r.worst;
}

TEST(Cvlad, SingleLevelEqualsLayer) {
  Rng rng(8);
  ParamStore store;
  const std::vector<VladLayerParams> p{make_vlad_layer(store, "v", 6, 4, rng)};
  const std::vector<DiffArray> enc{random_uniform({30, 6}, rng, -1, 1, false)};
  const GlobalDescriptor d = cvlad_forward(enc, p);
  EXPECT_EQ(d.vector.values().matrix(), vlad_layer(enc[0], p[0]).values().matrix());
  ASSERT_EQ(d.slices.size(), 1u);
  EXPECT_EQ(d.slices[0].offset, 0);
  EXPECT_EQ(d.slices[0].length, 24);
}

TEST(Cvlad, ConcatenatesLevelsInOrder) {
  Rng rng(9);
  ParamStore store;
  const std::vector<Index> widths{4, 8, 16};
  const std::vector<Index> sizes{64, 16, 4};
  std::vector<VladLayerParams> p;
  std::vector<DiffArray> enc;
  for (std::size_t l = 0; l < 3; ++l) {
    p.push_back(make_vlad_layer(store, "v" + std::to_string(l), widths[l], 3, rng));
    enc.push_back(random_uniform({sizes[l], widths[l]}, rng, -1, 1, false));
  }
  const GlobalDescriptor d = cvlad_forward(enc, p);
  EXPECT_EQ(d.length(), 3 * (4 + 8 + 16));
  Index offset = 0;
  for (std::size_t l = 0; l < 3; ++l) {
    EXPECT_EQ(d.slices[l].offset, offset);
    EXPECT_EQ(d.slices[l].length, 3 * widths[l]);
    const DiffArray v = vlad_layer(enc[l], p[l]);
    for (Index i = 0; i < v.size(); ++i) EXPECT_EQ(d.vector[offset + i], v[i]);
    offset += d.slices[l].length;
  }
  EXPECT_THROW(cvlad_forward(std::span(enc).first(2), p), DimensionError);
  EXPECT_THROW(cvlad_forward({}, {}), ValidationError);
}

TEST(Cvlad, NormalisedDescriptorIsUnitLength) {
  Rng rng(10);
  ParamStore store;
  std::vector<VladLayerParams> p{make_vlad_layer(store, "a", 4, 3, rng), make_vlad_layer(store, "b", 6, 3, rng)};
  std::vector<DiffArray> enc{random_uniform({20, 4}, rng), random_uniform({5, 6}, rng)};
  const GlobalDescriptor d = cvlad_forward(enc, p, true);
  EXPECT_NEAR(d.vector.values().matrix().norm(), 1.0, 1e-12);
}

TEST(GlobalDescriptorModes, LengthsAndPooling) {
  Rng rng(11);
  ParamStore store;
  std::vector<VladLayerParams> p{make_vlad_layer(store, "a", 4, 2, rng), make_vlad_layer(store, "b", 6, 2, rng)};
  std::vector<DiffArray> enc{random_uniform({20, 4}, rng, -1, 1, false), random_uniform({5, 6}, rng, -1, 1, false)};
  EXPECT_EQ(global_descriptor(GlobalMode::kNone, enc, p).length(), 0);
  EXPECT_EQ(global_descriptor(GlobalMode::kComprehensive, enc, p).length(), 20);
  const GlobalDescriptor last = global_descriptor(GlobalMode::kLastLayerVlad, enc, p);
  EXPECT_EQ(last.vector.values().matrix(), vlad_layer(enc[1], p[1]).values().matrix());
  const GlobalDescriptor mx = global_descriptor(GlobalMode::kMaxPool, enc, p);
  const GlobalDescriptor mean = global_descriptor(GlobalMode::kMeanPool, enc, p);
  ASSERT_EQ(mx.length(), 6);
  ASSERT_EQ(mean.length(), 6);
  for (Index ch = 0; ch < 6; ++ch) {
    double m = -INFINITY, s = 0;
    for (Index i = 0; i < 5; ++i) {
      m = std::max(m, enc[1].at({i, ch}));
      s += enc[1].at({i, ch});
    }
    EXPECT_EQ(mx.vector[ch], m);
    EXPECT_NEAR(mean.vector[ch], s / 5, 1e-15);
  }
}

TEST(InjectGlobal, ShapeAndBroadcast) {
  Rng rng(12);
  ParamStore store;
  std::vector<VladLayerParams> p{make_vlad_layer(store, "a", 4, 2, rng)};
  std::vector<DiffArray> enc{random_uniform({9, 4}, rng, -1, 1, false)};
  const GlobalDescriptor d = cvlad_forward(enc, p);
  InjectionParams inj = make_injection(store, "inject", 8, 4, rng);
  const DiffArray out = inject_global(d, enc[0], inj, ForwardMode{});
  EXPECT_EQ(out.shape(), (Shape{9, 4}));
  EXPECT_TRUE(out.values().isFinite().all());
  InjectionParams wrong = make_injection(store, "wrong", 7, 4, rng);
  EXPECT_THROW(inject_global(d, enc[0], wrong, ForwardMode{}), DimensionError);
  EXPECT_THROW(inject_global(d, DiffArray::zeros({9, 5}), inj, ForwardMode{}), DimensionError);
}

TEST(InjectGlobal, IdenticalBottleneckRowsStayIdentical) {
  // The descriptor contributes the same projected row to every point.
  Rng rng(13);
  ParamStore store;
  InjectionParams inj = make_injection(store, "inject", 6, 3, rng);
  GlobalDescriptor d;
  d.vector = random_uniform({6}, rng, -1, 1, false);
  d.slices.push_back({0, 6});
  const DiffArray row = random_uniform({1, 3}, rng, -1, 1, false);
  const DiffArray out = inject_global(d, broadcast_to(row, {7, 3}), inj, ForwardMode{false});
  for (Index i = 1; i < 7; ++i)
    for (Index ch = 0; ch < 3; ++ch) EXPECT_EQ(out.at({i, ch}), out.at({0, ch}));
}

TEST(InjectGlobal, ZeroDescriptorSeesOnlyProjectionBias) {
  Rng rng(14);
  ParamStore store;
  InjectionParams inj = make_injection(store, "inject", 6, 3, rng);
  GlobalDescriptor zero;
  zero.vector = DiffArray::zeros({6});
  zero.slices.push_back({0, 6});
  const DiffArray bottleneck = random_uniform({5, 3}, rng, -1, 1, false);
  const DiffArray a = inject_global(zero, bottleneck, inj, ForwardMode{false});
  // Changing projection weights cannot matter for a zero descriptor.
  inj.project.weight.values_mut() *= 3.0;
  const DiffArray b = inject_global(zero, bottleneck, inj, ForwardMode{false});
  EXPECT_EQ(a.values().matrix(), b.values().matrix());
}

TEST(InjectGlobal, GradientReachesCentresThroughTheDecoderInput) {
  Rng rng(15);
  ParamStore store;
  std::vector<VladLayerParams> p{make_vlad_layer(store, "a", 3, 2, rng), make_vlad_layer(store, "b", 4, 2, rng)};
  std::vector<DiffArray> enc{random_uniform({12, 3}, rng), random_uniform({6, 4}, rng)};
  InjectionParams inj = make_injection(store, "inject", 14, 4, rng);
  const DiffArray w = random_uniform({6, 4}, rng, -1, 1, false);
  std::vector<DiffArray> inputs{enc[0], enc[1], p[0].centers, p[1].centers, p[0].assign_weight, inj.project.weight};
  const auto r = gradcheck(
      [&] { return weighted_sum(inject_global(cvlad_forward(enc, p), enc[1], inj, ForwardMode{}), w); }, inputs);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
  EXPECT_GT(p[0].centers.grad().abs().maxCoeff(), 0.0);
}
