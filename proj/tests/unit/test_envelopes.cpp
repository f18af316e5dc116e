#include <gtest/gtest.h>

#include <random>

#include "msr/envelopes.hpp"

using namespace msr;

namespace {

Mat3 random_matrix(std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  Mat3 M;
  for (int i = 0; i < 9; ++i) M(i % 3, i / 3) = nd(rng);
  return M;
}

Mat3 random_direction(std::mt19937_64& rng) {
  const Mat3 D = random_matrix(rng);
  return D / D.norm();
}

EnvelopeOptions quick() {
  EnvelopeOptions o;
  o.points = 4;
  o.multistart = 6;
  o.cell_n = 2;
  o.cell_multistart = 3;
  return o;
}

}  // namespace

TEST(RadialOracle, Values) {
  EXPECT_EQ(radial_envelope_oracle(0.0), 0.0);
  EXPECT_EQ(radial_envelope_oracle(1.0), 0.0);
  EXPECT_DOUBLE_EQ(radial_envelope_oracle(2.0), 9.0);
  EXPECT_THROW(radial_envelope_oracle(-0.1), std::invalid_argument);
}

TEST(ConvexEnvelope, RadialQuarticMatchesOracle) {
  const EnergyDensity W = EnergyDensity::radial_quartic();
  std::mt19937_64 rng(21);
  for (int i = 0; i < 8; ++i) {
    const double t = 3.0 * i / 7.0;
    const Mat3 F = t * random_direction(rng);
    const EnvelopeResult r = convex_envelope(W, F);
    EXPECT_NEAR(r.value, radial_envelope_oracle(t), 1e-4) << "t=" << t;
    EXPECT_LE(r.value, evaluate(W, F) + 1e-12);
  }
}

TEST(ConvexEnvelope, TwoPointCombinationAtOrigin) {
  const EnergyDensity W = EnergyDensity::radial_quartic();
  Mat3 M = Mat3::Zero();
  M(0, 0) = 1.0;
  // explicit competitor: half at M, half at -M
  const double explicit_value = 0.5 * evaluate(W, M) + 0.5 * evaluate(W, -M);
  EXPECT_EQ(explicit_value, 0.0);
  const EnvelopeResult r = convex_envelope(W, Mat3::Zero(), quick());
  EXPECT_LE(r.value, 1e-10);
  EXPECT_FALSE(r.stalled);
  Mat3 bary = Mat3::Zero();
  double wsum = 0.0;
  for (std::size_t i = 0; i < r.atoms.size(); ++i) {
    bary += r.weights[i] * r.atoms[i];
    wsum += r.weights[i];
  }
  EXPECT_NEAR(wsum, 1.0, 1e-12);
  EXPECT_LT(bary.norm(), 1e-10);
}

TEST(ConvexEnvelope, ConvexRegionIsUntouched) {
  const EnergyDensity W = EnergyDensity::radial_quartic();
  Mat3 F = Mat3::Zero();
  F(0, 0) = 2.0;
  const EnvelopeResult r = convex_envelope(W, F, quick());
  EXPECT_NEAR(r.value, 9.0, 1e-6);
  EXPECT_TRUE(r.stalled);
}

TEST(ConvexEnvelope, MonotoneInSupportSize) {
  const EnergyDensity W = EnergyDensity::pwell_dist(2.0);
  std::mt19937_64 rng(22);
  for (int t = 0; t < 3; ++t) {
    const Mat3 F = Mat3::Identity() + 0.3 * random_matrix(rng);
    double prev = 1e300;
    for (int N : {2, 3, 5}) {
      EnvelopeOptions o = quick();
      o.points = N;
      const double v = convex_envelope(W, F, o).value;
      EXPECT_LE(v, prev + 1e-12);
      prev = v;
    }
  }
}

TEST(ConvexEnvelope, ConvexCollapse) {
  const EnergyDensity W = EnergyDensity::quadratic_convex();
  std::mt19937_64 rng(23);
  for (int t = 0; t < 10; ++t) {
    const Mat3 F = random_matrix(rng, 1.5);
    EXPECT_NEAR(convex_envelope(W, F, quick()).value, evaluate(W, F), 1e-6);
    EXPECT_NEAR(cell_qcw(W, F, quick()).value, evaluate(W, F), 1e-5);
  }
}

TEST(ReducedDensities, W0Examples) {
  EXPECT_LT(reduced_W0(EnergyDensity::quadratic_convex(), Vec3::UnitZ()).value, 1e-14);
  const EnergyDensity P = EnergyDensity::pwell_dist(2.0, 1.0, std::nullopt);
  EXPECT_LT(reduced_W0(P, Vec3::UnitZ()).value, 1e-14);
  // oracle: with the exact in-plane completion b = R_alpha, dist^2((b|0), R) = |R e3|^2 = 1 for every rotation
  std::mt19937_64 rng(24);
  std::uniform_real_distribution<double> u;
  double brute = 1e300;
  for (int s = 0; s < 10000; ++s) {
    const Mat3 R = random_rotation(u(rng), u(rng), u(rng));
    brute = std::min(brute, (join(in_plane(R), Vec3::Zero()) - R).squaredNorm());
  }
  EXPECT_NEAR(reduced_W0(P, Vec3::Zero()).value, brute, 1e-8);
}

TEST(ReducedDensities, W1Examples) {
  EXPECT_LT(reduced_W1(EnergyDensity::quadratic_convex(), identity_alpha()).value, 1e-14);
  EXPECT_LT(reduced_W1(EnergyDensity::pwell_dist(2.0, 1.0, std::nullopt), identity_alpha()).value, 1e-14);
  // 1D line search in |b|: (t^2-1)^2 is minimized at t = 1
  double line = 1e300;
  for (int i = 0; i <= 2000; ++i) {
    const double t = 2.0 * i / 2000;
    line = std::min(line, std::pow(t * t - 1.0, 2));
  }
  EXPECT_NEAR(reduced_W1(EnergyDensity::radial_quartic(), Mat3x2::Zero()).value, line, 1e-10);
}

TEST(ReducedDensities, FrameIndifference) {
  const EnergyDensity W = EnergyDensity::pwell_dist(4.0);
  std::mt19937_64 rng(25);
  std::uniform_real_distribution<double> u;
  const Vec3 zeta(0.3, 0.2, 1.5);
  const Mat3x2 Ma = in_plane(Mat3::Identity() + 0.4 * random_matrix(rng));
  for (int t = 0; t < 3; ++t) {
    const Mat3 R = random_rotation(u(rng), u(rng), u(rng));
    EXPECT_NEAR(reduced_W0(W, R * zeta).value, reduced_W0(W, zeta).value, 1e-8);
    EXPECT_NEAR(reduced_W1(W, R * Ma).value, reduced_W1(W, Ma).value, 1e-8);
  }
}

TEST(ReducedDensities, BelowSuppliedCompletion) {
  const EnergyDensity W = EnergyDensity::radial_quartic();
  std::mt19937_64 rng(26);
  for (int t = 0; t < 5; ++t) {
    const Mat3 F = random_matrix(rng);
    EXPECT_LE(reduced_W0(W, normal_col(F)).value, evaluate(W, F) + 1e-14);
    EXPECT_LE(reduced_W1(W, in_plane(F)).value, evaluate(W, F) + 1e-14);
  }
}

TEST(Cell, ProlongationPreservesEnergy) {
  const Integrand W = as_integrand(EnergyDensity::radial_quartic());
  std::mt19937_64 rng(27);
  std::normal_distribution<double> nd(0.0, 0.3);
  const int n = 2;
  std::vector<double> phi(3 * CellGrid{n}.nodes());
  for (double& v : phi) v = nd(rng);
  const Mat3 T = random_matrix(rng, 0.5);
  const double coarse = cell_energy(W, T, n, phi.data(), 1.2, nullptr);
  const std::vector<double> fine = prolong_cell_field(phi, n);
  EXPECT_NEAR(cell_energy(W, T, 2 * n, fine.data(), 1.2, nullptr), coarse, 1e-12 * (1.0 + coarse));
}

TEST(Cell, GradientMatchesFiniteDifferences) {
  const Integrand W = as_integrand(EnergyDensity::radial_quartic());
  std::mt19937_64 rng(28);
  std::normal_distribution<double> nd(0.0, 0.3);
  const int n = 2;
  std::vector<double> x(3 * CellGrid{n}.nodes() + 1);
  for (double& v : x) v = nd(rng);
  x.back() = 1.1;
  const Mat3 T = random_matrix(rng, 0.5);
  std::vector<double> g(x.size());
  cell_energy(W, T, n, x.data(), x.back(), g.data());
  for (std::size_t i = 0; i < x.size(); ++i) {
    std::vector<double> xp = x, xm = x;
    xp[i] += 1e-6;
    xm[i] -= 1e-6;
    const double fd = (cell_energy(W, T, n, xp.data(), xp.back(), nullptr) -
                       cell_energy(W, T, n, xm.data(), xm.back(), nullptr)) / 2e-6;
    EXPECT_NEAR(g[i], fd, 1e-6 * (1.0 + std::abs(fd)));
  }
}

TEST(Cell, InPlaneLaminateAtOrigin) {
  // laminate oracle: phi = a * tent(x1) with |a| = 1 gives gradients (+-a | 0 | 0), each with energy 0
  const EnergyDensity W = EnergyDensity::radial_quartic();
  const CellResult r = cell_qcw(W, Mat3::Zero(), quick());
  EXPECT_GE(r.value, 0.0);
  EXPECT_LE(r.value, 1e-8);
  EXPECT_EQ(r.direct, 1.0);
}

TEST(Cell, NestedMonotonicity) {
  const EnergyDensity W = EnergyDensity::pwell_dist(4.0);
  Mat3 F = Mat3::Zero();
  F.leftCols<2>() = 0.8 * identity_alpha();
  EnvelopeOptions o2 = quick(), o4 = quick();
  o4.cell_n = 4;
  EXPECT_LE(cell_qcw(W, F, o4).value, cell_qcw(W, F, o2).value + 1e-9);
}

TEST(Chain, SandwichHolds) {
  std::mt19937_64 rng(29);
  std::vector<Mat3> samples;
  for (int t = 0; t < 3; ++t) samples.push_back(Mat3::Identity() + 0.5 * random_matrix(rng));
  for (const auto& W : {EnergyDensity::quadratic_convex(), EnergyDensity::radial_quartic(), EnergyDensity::pwell_dist(4.0)}) {
    const ChainReport rep = verify_envelope_chain(W, samples, quick());
    EXPECT_TRUE(rep.ok()) << W.name;
    if (W.is_convex())
      for (const auto& row : rep.rows) {
        EXPECT_NEAR(row.convex, row.w, 2e-6);
        EXPECT_NEAR(row.cell, row.w, 2e-6);
      }
  }
}

TEST(Cross1D, DegenerateAndJensen) {
  std::mt19937_64 rng(30);
  const Mat3 A = random_matrix(rng);
  const Cross1DReport same = cross_convex_1d_check(EnergyDensity::radial_quartic(), normal_col(A), in_plane(A),
                                                   normal_col(A), in_plane(A), 0.5);
  EXPECT_EQ(same.gap, 0.0);
  const EnergyDensity Q = EnergyDensity::quadratic_convex();
  for (int t = 0; t < 20; ++t) {
    const Mat3 F1 = random_matrix(rng), F2 = random_matrix(rng);
    const double lam = std::uniform_real_distribution<double>(0.05, 0.95)(rng);
    const Cross1DReport c = cross_convex_1d_check(Q, normal_col(F1), in_plane(F1), normal_col(F2), in_plane(F2), lam);
    EXPECT_GE(c.gap, -1e-10);
    EXPECT_LT(c.theta_at_0, 1e-14);
    EXPECT_LT(c.theta_at_1, 1e-14);
    EXPECT_LT(c.eta_mean, 1e-14);
    // Jensen oracle for |F - I|^2: the gap is lam (1 - lam) |F1 - F2|^2
    EXPECT_NEAR(c.gap, lam * (1 - lam) * (F1 - F2).squaredNorm(), 1e-10);
  }
  EXPECT_THROW(cross_convex_1d_check(Q, Vec3::Zero(), Mat3x2::Zero(), Vec3::Zero(), Mat3x2::Zero(), 1.0),
               std::invalid_argument);
}

TEST(Cross1D, StrictDropAcrossTheWell) {
  Mat3x2 b1 = Mat3x2::Zero(), b2 = Mat3x2::Zero();
  b1(0, 0) = 1.0;
  b2(0, 0) = -1.0;
  const Cross1DReport c =
      cross_convex_1d_check(EnergyDensity::radial_quartic(), Vec3::Zero(), b1, Vec3::Zero(), b2, 0.5);
  EXPECT_DOUBLE_EQ(c.lhs, 1.0);
  EXPECT_DOUBLE_EQ(c.rhs, 0.0);
  EXPECT_LE(c.gap, -1e-3);
}

TEST(Commute, ScalingCommutes) {
  std::mt19937_64 rng(31);
  std::vector<Mat3> samples;
  for (int t = 0; t < 3; ++t) samples.push_back(random_matrix(rng, 0.7));
  const CommuteReport same = envelope_scaling_commute(EnergyDensity::radial_quartic(), 1.0, samples, quick());
  EXPECT_EQ(same.max_diff, 0.0);
  const CommuteReport convex = envelope_scaling_commute(EnergyDensity::quadratic_convex(), 0.5, samples, quick());
  EXPECT_LE(convex.max_diff, 2e-6);
  const CommuteReport quartic = envelope_scaling_commute(EnergyDensity::radial_quartic(), 2.0, samples, quick());
  EXPECT_LE(quartic.max_diff, 2e-6);
}
