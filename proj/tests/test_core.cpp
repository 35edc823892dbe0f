#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "cylk/core.hpp"
#include "test_util.hpp"

using namespace cylk;
using cylk::testing::random_map;

namespace {

// Four-corner formula with replicate clamping, written out independently.
double oracle_bilinear(const FeatureMap& m, double x, double y, int c) {
  x = std::clamp(x, 0.0, m.width() - 1.0);
  y = std::clamp(y, 0.0, m.height() - 1.0);
  const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
  const int x1 = std::min(x0 + 1, m.width() - 1), y1 = std::min(y0 + 1, m.height() - 1);
  const double ax = x - x0, ay = y - y0;
  return (1 - ax) * (1 - ay) * m(y0, x0, c) + ax * (1 - ay) * m(y0, x1, c) +
         (1 - ax) * ay * m(y1, x0, c) + ax * ay * m(y1, x1, c);
}

FeatureMap ramp(int h, int w, double a, double b, double c0 = 0.0) {
  FeatureMap m(h, w, 1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) m(y, x) = a * x + b * y + c0;
  return m;
}

}  // namespace

TEST(FeatureMap, ShapeAndLayout) {
  FeatureMap m(3, 4, 2, 1.5);
  EXPECT_EQ(m.size(), 24u);
  EXPECT_EQ(m.index(1, 2, 1), (1u * 4 + 2) * 2 + 1);
  EXPECT_TRUE(m.all_finite());
  m(2, 3, 1) = std::numeric_limits<double>::infinity();
  EXPECT_FALSE(m.all_finite());
  EXPECT_THROW(FeatureMap(2, 2, 1, std::vector<double>(3)), Error);
}

TEST(Bilinear, IntegerPositionReturnsPixel) {
  FeatureMap m(5, 5, 1, 0.0);
  m(2, 3) = 7.0;
  EXPECT_EQ(bilinear_sample(m, {3.0, 2.0})[0], 7.0);
}

TEST(Bilinear, CenterOfTwoByTwo) {
  FeatureMap m(2, 2, 1, std::vector<double>{0.0, 1.0, 2.0, 3.0});
  EXPECT_DOUBLE_EQ(bilinear_sample(m, {0.5, 0.5})[0], 1.5);
}

TEST(Bilinear, MatchesFourCornerFormula) {
  const FeatureMap m = random_map(8, 8, 1, 11);
  EXPECT_NEAR(bilinear_sample(m, {2.25, 5.75})[0], oracle_bilinear(m, 2.25, 5.75, 0), 1e-12);
  const FeatureMap mc = random_map(9, 7, 3, 12);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> ux(-2.0, 9.0), uy(-2.0, 11.0);
  for (int i = 0; i < 200; ++i) {
    const double x = ux(rng), y = uy(rng);
    const auto v = bilinear_sample(mc, {x, y});
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(v[c], oracle_bilinear(mc, x, y, c), 1e-12);
  }
}

TEST(Bilinear, ExactOnAffineMaps) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> coef(-3.0, 3.0), pos(0.0, 11.0);
  for (int trial = 0; trial < 20; ++trial) {
    const double a = coef(rng), b = coef(rng), c = coef(rng);
    const FeatureMap m = ramp(12, 12, a, b, c);
    for (int i = 0; i < 20; ++i) {
      const double x = pos(rng), y = pos(rng);
      EXPECT_NEAR(bilinear_sample(m, {x, y})[0], a * x + b * y + c, 1e-10);
    }
  }
}

TEST(Bilinear, ReplicateClampOutsideGrid) {
  const FeatureMap m = random_map(6, 6, 1, 7);
  EXPECT_EQ(bilinear_sample(m, {-3.0, 2.0})[0], m(2, 0));
  EXPECT_EQ(bilinear_sample(m, {9.0, 20.0})[0], m(5, 5));
}

TEST(Bilinear, NonFinitePointRejected) {
  const FeatureMap m(4, 4, 1, 0.0);
  try {
    bilinear_sample(m, {std::nan(""), 1.0});
    FAIL() << "no exception";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidPoint);
  }
}

TEST(Bilinear, PositionGradMatchesDifferences) {
  const FeatureMap m = random_map(10, 10, 2, 21);
  const Point p{4.3, 6.6};
  std::vector<double> gx(2), gy(2);
  bilinear_position_grad(m, p, gx, gy);
  const double h = 1e-6;
  for (int c = 0; c < 2; ++c) {
    const double fdx = (oracle_bilinear(m, p.x + h, p.y, c) - oracle_bilinear(m, p.x - h, p.y, c)) / (2 * h);
    const double fdy = (oracle_bilinear(m, p.x, p.y + h, c) - oracle_bilinear(m, p.x, p.y - h, c)) / (2 * h);
    EXPECT_NEAR(gx[c], fdx, 1e-7);
    EXPECT_NEAR(gy[c], fdy, 1e-7);
  }
  bilinear_position_grad(m, {-1.0, 4.5}, gx, gy);
  EXPECT_EQ(gx[0], 0.0);
}

TEST(Bilinear, ScatterIsAdjointOfSample) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> pos(-1.0, 8.0), val(-1.0, 1.0);
  for (int i = 0; i < 50; ++i) {
    const Point p{pos(rng), pos(rng)};
    const FeatureMap m = random_map(7, 7, 2, 100 + i);
    const std::vector<double> g{val(rng), val(rng)};
    FeatureMap t(7, 7, 2, 0.0);
    bilinear_scatter(t, p, g);
    const auto s = bilinear_sample(m, p);
    EXPECT_NEAR(cylk::testing::dot(t, m), g[0] * s[0] + g[1] * s[1], 1e-12);
    EXPECT_NEAR(cylk::testing::sum(t), g[0] + g[1], 1e-12);
  }
}

TEST(Stencil, RowMajorOffsets) {
  const PatchStencil s(2);
  ASSERT_EQ(s.count(), 25u);
  EXPECT_EQ(s.offsets()[0].dx, -2);
  EXPECT_EQ(s.offsets()[0].dy, -2);
  EXPECT_EQ(s.offsets()[1].dx, -1);
  EXPECT_EQ(s.offsets()[1].dy, -2);
  EXPECT_EQ(s.offsets()[5].dx, -2);
  EXPECT_EQ(s.offsets()[5].dy, -1);
  EXPECT_EQ(PatchStencil().side(), 15);
  EXPECT_THROW(PatchStencil(0), Error);
}

TEST(Patch, ConstantMap) {
  const FeatureMap m(20, 20, 1, 4.0);
  const Patch p = extract_patch(m, {9.3, 10.7}, PatchStencil(7));
  ASSERT_EQ(p.size(), 225u);
  for (double v : p.values) EXPECT_EQ(v, 4.0);
}

TEST(Patch, RampAtFractionalCenter) {
  const FeatureMap m = ramp(8, 10, 1.0, 0.0);
  const Patch p = extract_patch(m, {5.5, 3.0}, PatchStencil(1));
  const std::vector<double> row{4.5, 5.5, 6.5};
  ASSERT_EQ(p.size(), 9u);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) EXPECT_DOUBLE_EQ(p.values[r * 3 + c], row[c]);
}

TEST(Patch, EqualsPerOffsetSampling) {
  const FeatureMap m = random_map(16, 16, 3, 31);
  const PatchStencil s(3);
  const Point c{7.4, 8.9};
  const Patch p = extract_patch(m, c, s);
  ASSERT_EQ(p.channels, 3);
  for (std::size_t k = 0; k < s.count(); ++k) {
    const auto o = s.offsets()[k];
    const auto v = bilinear_sample(m, {c.x + o.dx, c.y + o.dy});
    for (int ch = 0; ch < 3; ++ch) EXPECT_EQ(p.values[k * 3 + ch], v[ch]);
  }
}

TEST(Gradient, Ramps) {
  const auto gx = map_gradient(ramp(6, 6, 2.0, 0.0));
  EXPECT_DOUBLE_EQ(gx.first(3, 3), 2.0);
  EXPECT_DOUBLE_EQ(gx.second(3, 3), 0.0);
  // replicate boundary: one-sided difference halved
  EXPECT_DOUBLE_EQ(gx.first(3, 0), 1.0);
  const auto gy = map_gradient(ramp(6, 6, 0.0, 3.0));
  EXPECT_DOUBLE_EQ(gy.second(2, 2), 3.0);
  EXPECT_DOUBLE_EQ(gy.first(2, 2), 0.0);
}

TEST(Gradient, ProductSurface) {
  FeatureMap m(5, 5, 1);
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 5; ++x) m(y, x) = static_cast<double>(x * y);
  const auto g = map_gradient(m);
  EXPECT_DOUBLE_EQ(g.first(2, 2), 2.0);
  EXPECT_DOUBLE_EQ(g.second(2, 2), 2.0);
}

TEST(Gradient, TooSmall) {
  try {
    map_gradient(FeatureMap(2, 5, 1, 0.0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MapTooSmall);
  }
}

TEST(Gradient, AdjointIdentity) {
  const FeatureMap f = random_map(7, 9, 2, 41);
  const FeatureMap dx = random_map(7, 9, 2, 42), dy = random_map(7, 9, 2, 43);
  const auto g = map_gradient(f);
  const FeatureMap adj = map_gradient_adjoint(dx, dy);
  EXPECT_NEAR(cylk::testing::dot(adj, f),
              cylk::testing::dot(dx, g.first) + cylk::testing::dot(dy, g.second), 1e-12);
}

TEST(Jacobian, RampColumns) {
  const auto g = map_gradient(ramp(20, 20, 2.0, 0.0));
  const PatchStencil s(3);
  const PatchJacobian j = patch_jacobian(g, {10.0, 10.0}, s);
  ASSERT_EQ(j.rows(), s.count());
  for (std::size_t k = 0; k < j.rows(); ++k) {
    EXPECT_DOUBLE_EQ(j(k, 0), 2.0);
    EXPECT_DOUBLE_EQ(j(k, 1), 0.0);
  }
}

TEST(Jacobian, SamplesGradientMaps) {
  const FeatureMap f = random_map(12, 12, 2, 51);
  const auto g = map_gradient(f);
  const PatchStencil s(2);
  const Point c{5.6, 6.2};
  const PatchJacobian j = patch_jacobian(g, c, s);
  const Patch px = extract_patch(g.first, c, s), py = extract_patch(g.second, c, s);
  for (std::size_t r = 0; r < j.rows(); ++r) {
    EXPECT_EQ(j(r, 0), px.values[r]);
    EXPECT_EQ(j(r, 1), py.values[r]);
  }
}

TEST(Core, PureFunctionsRepeat) {
  const FeatureMap f = random_map(10, 10, 1, 61);
  const PatchStencil s(2);
  EXPECT_EQ(extract_patch(f, {4.5, 4.5}, s).values, extract_patch(f, {4.5, 4.5}, s).values);
  EXPECT_EQ(map_gradient(f).first, map_gradient(f).first);
}
