#include <gtest/gtest.h>

#include <cstring>

#include "oracles.hpp"
#include "pmpd/pmp_ops.hpp"

using namespace pmpd;

namespace {

RegressionConfig regression(double alpha, NeighborMode mode = NeighborMode::averaged) {
  RegressionConfig c;
  c.alpha = alpha;
  c.neighbor_mode = mode;
  return c;
}

PixelMovement flow(Shape s, std::vector<double> v) { return PixelMovement{Tensor::from(s, v)}; }

PixelMovement constant_flow(double dx, double dy) {
  return flow({1, 2, 2, 2}, {dx, dx, dx, dx, dy, dy, dy, dy});
}

}  // namespace

TEST(CostVolume, OnesGiveUnitCostAtZeroShift) {
  Tensor f = Tensor::full({1, 4, 2, 3}, 1.0);
  CostVolume cv = cost_volume(f, f, 2);
  EXPECT_EQ(cv.feature_channels, 4u);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(cv.data.at(0, 0, i, j), 1.0);
  // Shift 1 reaches past the left border at column 0.
  EXPECT_EQ(cv.data.at(0, 1, 0, 0), 0.0);
  EXPECT_EQ(cv.data.at(0, 1, 0, 1), 1.0);
}

TEST(CostVolume, OrthogonalFeaturesCostZero) {
  Tensor a = Tensor::from({1, 2, 1, 1}, {1, 0}), b = Tensor::from({1, 2, 1, 1}, {0, 1});
  // D must not exceed W, so widen to two columns.
  Tensor a2 = concat({a, a}, 3), b2 = concat({b, b}, 3);
  EXPECT_EQ(cost_volume(a2, b2, 2).data.at(0, 0, 0, 0), 0.0);
}

TEST(CostVolume, MatchesLoopReference) {
  Rng rng(31);
  Tensor p = oracle::random(rng, {1, 3, 2, 5}), r = oracle::random(rng, {1, 3, 2, 5});
  const auto ref = oracle::cost_volume(p, r, 3);
  Tensor cv = cost_volume(p, r, 3).data;
  ASSERT_EQ(cv.shape(), (Shape{1, 3, 2, 5}));
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(cv.values()[i], ref[i], 1e-12);
}

TEST(CostVolume, TooManyHypothesesIsConfigError) {
  Tensor f = Tensor::zeros({1, 2, 2, 4});
  EXPECT_THROW(cost_volume(f, f, 5), ConfigError);
}

TEST(CostVolume, LinearInPrediction) {
  Rng rng(32);
  Tensor p = oracle::random(rng, {2, 3, 3, 6}), r = oracle::random(rng, {2, 3, 3, 6});
  Tensor a = cost_volume(scale(p, 2.5), r, 4).data, b = cost_volume(p, r, 4).data;
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a.values()[i], 2.5 * b.values()[i], 1e-12);
}

TEST(InitialDepth, PeakedColumn) {
  Tensor c = Tensor::from({1, 4, 1, 1}, {100, 0, 0, 0});
  EXPECT_NEAR(initial_depth(CostVolume{c, 1}).item(), 0.0, 1e-6);
}

TEST(InitialDepth, UniformColumnIsMidpoint) {
  Tensor c = Tensor::full({1, 5, 1, 1}, 0.3);
  EXPECT_DOUBLE_EQ(initial_depth(CostVolume{c, 1}).item(), 2.0);
}

TEST(InitialDepth, KnownValue) {
  Tensor c = Tensor::from({1, 3, 1, 1}, {1, 2, 3});
  EXPECT_NEAR(initial_depth(CostVolume{c, 1}).item(), 1.57521, 1e-5);
}

TEST(InitialDepth, StaysInHypothesisRange) {
  Rng rng(33);
  Tensor c = oracle::random(rng, {2, 7, 3, 4}, -50.0, 50.0);
  const Tensor depth = initial_depth(CostVolume{c, 1});
  for (double d : depth.values()) {
    EXPECT_GE(d, 0.0);
    EXPECT_LE(d, 6.0);
  }
}

TEST(FinalDepth, AlphaZeroIsBitIdentity) {
  Rng rng(34);
  Tensor d = oracle::random(rng, {2, 1, 4, 5}, 0.0, 10.0);
  Tensor off = oracle::random(rng, {2, 8, 2, 4, 5});
  Tensor y = final_depth(d, OffsetField{off}, regression(0.0));
  EXPECT_EQ(std::memcmp(y.values().data(), d.values().data(), d.numel() * sizeof(double)), 0);
}

TEST(FinalDepth, ConstantDepthInterior) {
  Tensor d = Tensor::full({1, 1, 5, 5}, 4.5);
  for (double alpha : {0.25, 0.5, 1.0}) {
    Tensor y = final_depth(d, OffsetField{Tensor::zeros({1, 8, 2, 5, 5})}, regression(alpha));
    for (std::size_t i = 1; i < 4; ++i)
      for (std::size_t j = 1; j < 4; ++j) EXPECT_NEAR(y.at(0, 0, i, j), 4.5, 1e-12);
  }
}

TEST(FinalDepth, ZeroOffsetsGiveBoxMean) {
  Rng rng(35);
  Tensor d = oracle::random(rng, {1, 1, 5, 6}, 0.0, 10.0);
  Tensor y = final_depth(d, OffsetField{Tensor::zeros({1, 8, 2, 5, 6})}, regression(1.0));
  for (std::size_t i = 1; i < 4; ++i)
    for (std::size_t j = 1; j < 5; ++j) {
      double s = 0.0;
      for (int di = -1; di <= 1; ++di)
        for (int dj = -1; dj <= 1; ++dj)
          if (di || dj) s += d.at(0, 0, i + di, j + dj);
      EXPECT_NEAR(y.at(0, 0, i, j), s / 8.0, 1e-12);
    }
}

TEST(FinalDepth, MatchesNeighbourLoopReference) {
  Rng rng(36);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor d = oracle::random(rng, {1, 1, 4, 4}, 0.0, 10.0);
    Tensor off = oracle::random(rng, {1, 8, 2, 4, 4});
    for (bool averaged : {true, false}) {
      Tensor y = final_depth(d, OffsetField{off},
                             regression(0.5, averaged ? NeighborMode::averaged : NeighborMode::literal_sum));
      const auto ref = oracle::final_depth(d, off, 0.5, averaged);
      for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y.values()[i], ref[i], 1e-10);
    }
  }
}

TEST(FinalDepth, ShapeMismatchRejected) {
  EXPECT_THROW(final_depth(Tensor::zeros({1, 1, 4, 4}), OffsetField{Tensor::zeros({1, 8, 2, 4, 5})},
                           regression(0.5)),
               DimensionError);
}

TEST(Pmtc, ZeroWhenTriangleCloses) {
  Rng rng(37);
  Tensor a = oracle::random(rng, {2, 2, 3, 3}), b = oracle::random(rng, {2, 2, 3, 3});
  Tensor l = add(a, b);
  EXPECT_EQ(pmtc_loss(PixelMovement{a}, PixelMovement{b}, PixelMovement{l}).item(), 0.0);
}

TEST(Pmtc, HandValue) {
  EXPECT_DOUBLE_EQ(pmtc_loss(constant_flow(1, 1), constant_flow(0.5, 0), constant_flow(0, 0)).item(),
                   1.25);
}

TEST(Pmtc, SymmetricInFirstTwoArguments) {
  Rng rng(38);
  Tensor a = oracle::random(rng, {1, 2, 3, 4}), b = oracle::random(rng, {1, 2, 3, 4}),
         l = oracle::random(rng, {1, 2, 3, 4});
  EXPECT_EQ(pmtc_loss(PixelMovement{a}, PixelMovement{b}, PixelMovement{l}).item(),
            pmtc_loss(PixelMovement{b}, PixelMovement{a}, PixelMovement{l}).item());
}

TEST(Pmtc, ShapeMismatchRejected) {
  EXPECT_THROW(pmtc_loss(constant_flow(0, 0), constant_flow(0, 0),
                         PixelMovement{Tensor::zeros({1, 2, 3, 3})}),
               DimensionError);
}

TEST(ToMeters, Scale) {
  RegressionConfig c;
  c.depth_scale = 2.5;
  EXPECT_EQ(to_meters(Tensor::from({1, 1, 1, 2}, {3, 0}), c).values()[0], 7.5);
  EXPECT_EQ(to_meters(Tensor::from({1, 1, 1, 2}, {3, 0}), c).values()[1], 0.0);
  Tensor back = scale(to_meters(Tensor::from({1, 1, 1, 1}, {3.7}), c), 1.0 / 2.5);
  EXPECT_NEAR(back.item(), 3.7, 1e-12);
}

TEST(RegressionConfig, Validation) {
  EXPECT_THROW(regression(1.5).validate(), ConfigError);
  RegressionConfig c;
  c.hypotheses = 1;
  EXPECT_THROW(c.validate(), ConfigError);
}
