#include <gtest/gtest.h>

#include <random>

#include "msr/material.hpp"

using namespace msr;

namespace {

Mat3 random_matrix(std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  Mat3 M;
  for (int i = 0; i < 9; ++i) M(i % 3, i / 3) = nd(rng);
  return M;
}

// matrices with |F| on a radius grid, random directions
std::vector<Mat3> radius_grid(double rmax, int nr, int per, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Mat3> out;
  for (int i = 0; i <= nr; ++i)
    for (int k = 0; k < per; ++k) {
      Mat3 D = random_matrix(rng);
      out.push_back(D / D.norm() * (rmax * i / nr));
    }
  return out;
}

std::vector<EnergyDensity> shipped() {
  return {EnergyDensity::radial_quartic(), EnergyDensity::quadratic_convex(), EnergyDensity::pwell_dist(2.0),
          EnergyDensity::pwell_dist(4.0), EnergyDensity::pwell_dist(1.5, 2.0, std::nullopt)};
}

}  // namespace

TEST(Evaluate, RadialQuartic) {
  const EnergyDensity W = EnergyDensity::radial_quartic();
  Mat3 F = Mat3::Zero();
  F(1, 2) = 1.0;
  EXPECT_EQ(evaluate(W, F), 0.0);
  Mat3 G = Mat3::Zero();
  G(0, 0) = 2.0;
  EXPECT_DOUBLE_EQ(evaluate(W, G), 9.0);
}

TEST(Evaluate, NaturalState) {
  EXPECT_EQ(evaluate(EnergyDensity::pwell_dist(2.0, 1.0, std::nullopt), Mat3::Identity()), 0.0);
  EXPECT_EQ(evaluate(EnergyDensity::pwell_dist(4.0), Mat3::Identity()), 0.0);
  EXPECT_EQ(evaluate(EnergyDensity::quadratic_convex(), Mat3::Identity()), 0.0);
}

TEST(Evaluate, PWellDistVanishesOnRotationsAndIsNonnegative) {
  const EnergyDensity W = EnergyDensity::pwell_dist(4.0);
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u;
  for (int t = 0; t < 100; ++t) {
    const Mat3 R = random_rotation(u(rng), u(rng), u(rng));
    EXPECT_LT(evaluate(W, R), 1e-24);
    EXPECT_LT(evaluate(W, 1.3 * R), 1e-24);
    EXPECT_GE(evaluate(W, random_matrix(rng, 2.0)), 0.0);
  }
}

TEST(Gradient, CriticalPoints) {
  EXPECT_EQ(gradient(EnergyDensity::radial_quartic(), Mat3::Zero()).norm(), 0.0);
  EXPECT_EQ(gradient(EnergyDensity::quadratic_convex(), Mat3::Identity()).norm(), 0.0);
}

TEST(Gradient, MatchesFiniteDifferencesForEveryKind) {
  std::mt19937_64 rng(12);
  auto kinds = shipped();
  kinds.push_back(EnergyDensity::custom_fn([](const Mat3& F) { return std::pow(F.squaredNorm(), 1.5); }, 3.0, 10.0));
  for (const auto& W : kinds) {
    auto f = [&](const Mat3& F) { return evaluate(W, F); };
    for (int t = 0; t < 100; ++t) {
      const Mat3 F = random_matrix(rng, 1.5);
      const Mat3 g = gradient(W, F), fd = fd_gradient(f, F);
      EXPECT_LE((g - fd).norm(), 1e-5 * (1.0 + g.norm())) << W.name;
    }
  }
}

TEST(PGrowth, RadialQuarticAndQuadratic) {
  const auto grid = radius_grid(3.0, 60, 3, 13);
  EXPECT_TRUE(check_p_growth(EnergyDensity::radial_quartic(4.0), grid).holds);
  EXPECT_TRUE(check_p_growth(EnergyDensity::quadratic_convex(6.0), grid).holds);
  const GrowthReport bad = check_p_growth(EnergyDensity::radial_quartic(0.1), grid);
  EXPECT_FALSE(bad.holds);
  ASSERT_FALSE(bad.witnesses.empty());
  EXPECT_NEAR(bad.witnesses.front().norm(), 0.0, 1e-15);
}

TEST(PGrowth, EveryShippedDensityOnStandardGrid) {
  const auto grid = radius_grid(5.0, 100, 4, 14);
  for (const auto& W : shipped()) EXPECT_TRUE(check_p_growth(W, grid).holds) << W.name << " p=" << W.p;
}

TEST(ScaledDensity, Substitution) {
  const EnergyDensity W = EnergyDensity::radial_quartic();
  std::mt19937_64 rng(15);
  const auto s1 = scaled_density_a(W, 1.0);
  for (int t = 0; t < 20; ++t) {
    const Mat3 M = random_matrix(rng);
    EXPECT_EQ(s1(M), evaluate(W, M));
  }
  const auto sa = scaled_density_a(EnergyDensity::quadratic_convex(), 0.5);
  EXPECT_DOUBLE_EQ(sa(Mat3::Identity()), evaluate(EnergyDensity::quadratic_convex(), Vec3(2, 2, 1).asDiagonal()));
  const auto sb = scaled_density_b(W, 0.25);
  for (int t = 0; t < 20; ++t) {
    const Mat3 M = random_matrix(rng);
    Mat3 F = M;
    F.col(2) *= 4.0;
    const double direct = std::pow(F.squaredNorm() - 1.0, 2);
    EXPECT_NEAR(sb(M), direct, 1e-12 * (1.0 + direct));
  }
}

TEST(ScaledDensity, CompositionWithInverseScaleRecoversW) {
  const EnergyDensity W = EnergyDensity::pwell_dist(4.0);
  const auto s = scaled_density_a(W, 0.3);
  const EnergyDensity Ws = EnergyDensity::custom_fn([s](const Mat3& M) { return s(M); }, 4.0, 1.0);
  const auto back = scaled_density_a(Ws, 1.0 / 0.3);
  std::mt19937_64 rng(16);
  for (int t = 0; t < 20; ++t) {
    const Mat3 M = random_matrix(rng);
    EXPECT_NEAR(back(M), evaluate(W, M), 1e-12 * (1.0 + evaluate(W, M)));
  }
}

TEST(ScaledDensity, RejectsNonPositiveScale) {
  EXPECT_THROW(scaled_density_a(EnergyDensity::radial_quartic(), 0.0), ConfigError);
  EXPECT_THROW(scaled_density_b(EnergyDensity::radial_quartic(), -1.0), ConfigError);
}

TEST(ScaledDensity, GradientChainRule) {
  const auto sa = scaled_density_a(EnergyDensity::radial_quartic(), 0.4);
  const auto sb = scaled_density_b(EnergyDensity::radial_quartic(), 0.2);
  std::mt19937_64 rng(17);
  const Mat3 M = random_matrix(rng, 0.3);
  EXPECT_LE((sa.grad(M) - fd_gradient([&](const Mat3& F) { return sa(F); }, M)).norm(), 1e-5 * (1 + sa.grad(M).norm()));
  EXPECT_LE((sb.grad(M) - fd_gradient([&](const Mat3& F) { return sb(F); }, M)).norm(), 1e-5 * (1 + sb.grad(M).norm()));
}
