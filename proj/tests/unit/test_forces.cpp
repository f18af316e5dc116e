#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "msr/forces.hpp"

using namespace msr;

namespace {

Resolution small() {
  Resolution r;
  r.na = 4;
  r.nz = 6;
  r.nb = 10;
  r.nh = 3;
  return r;
}

Mat3 mat(double a) {
  Mat3 M;
  M << a, 0.2, -0.1, 0.3, -a, 0.5, 0.1, 0.4, 2 * a;
  return M;
}

// every load active, with spatial variation
ForceSystem busy_loads() {
  ForceSystem fs;
  fs.fa = Field3::affine(Vec3(0.1, -0.2, 0.3), mat(0.5));
  fs.fa.amp = Vec3(0.05, 0, 0.1);
  fs.fa.k = Vec3(1, 2, 3);
  fs.ga = Field3::affine(Vec3(0.2, 0.1, -0.1), mat(-0.3));
  fs.fb = Field3::affine(Vec3(0, 0, -0.4), mat(0.2));
  fs.gb_plus = Field3::affine(Vec3(0, 0.1, 0.05), mat(0.1));
  fs.gb_minus = Field3::affine(Vec3(0.3, 0, 0.2), mat(-0.2));
  fs.Gb = Field3::affine(Vec3(0.1, 0.2, 0.3), mat(0.7));
  fs.ghat_minus = Field3::affine(Vec3(-0.1, 0.4, 0.0), mat(0.3));
  fs.Ghat = Field3::affine(Vec3(0.5, -0.3, 0.8), mat(-0.6));
  fs.calGa.c0 = mat(1.0);
  fs.calGa.lin[2] = mat(-0.4);
  return fs;
}

Field poly_a(const HexGrid& g, double r) {
  return g.map_nodes([r](const Vec3& x) {
    return Vec3(r * x(0) + 0.1 * x(2) * x(2), r * x(1) - 0.2 * x(0) * x(2), x(2) + 0.3 * x(0) * x(1) + 0.05 * x(2) * x(2) * x(2));
  });
}

Field poly_b(const HexGrid& g, double h) {
  return g.map_nodes([h](const Vec3& x) {
    return Vec3(x(0) + 0.1 * x(1) * x(1), x(1) - 0.2 * x(0) * x(2), h * x(2) + 0.3 * x(0) * x(0) - 0.1 * x(1) * x(2));
  });
}

}  // namespace

TEST(Scaling, TubeSurfaceLoad) {
  ForceSystem fs;
  fs.ga = Field3::constant(Vec3(1, 0, 0));
  Mat3 G = Mat3::Zero();
  G(1, 0) = 1.0;
  fs.calGa = MatField::constant(G);
  const EpsForces plus = scale_forces(fs, Regime::LPlus, 0.1, 0.01);
  EXPECT_LT((plus.ga(Vec3(0.25, 0, 0.5), Vec3::UnitX()) - Vec3(0.1, 1, 0)).norm(), 1e-15);
  // LZero multiplies the tube loads by h/r^2
  const EpsForces zero = scale_forces(fs, Regime::LZero, 0.1, 1e-4);
  EXPECT_NEAR(zero.ka, 0.01, 1e-15);
  EXPECT_LT((zero.ga(Vec3(0.25, 0, 0.5), Vec3::UnitX()) - Vec3(0.001, 0.01, 0)).norm(), 1e-15);
}

TEST(Scaling, PlateFaceLoads) {
  ForceSystem fs;
  fs.gb_plus = Field3::constant(Vec3(0, 0, 1));
  fs.gb_minus = Field3::constant(Vec3(0, 0, 2));
  fs.Gb = Field3::constant(Vec3(1, 0, 0));
  fs.ghat_minus = Field3::constant(Vec3(0, 3, 0));
  fs.Ghat = Field3::constant(Vec3(0, 0, 5));
  const double r = 0.5, h = 0.1;
  const EpsForces e = scale_forces(fs, Regime::LInf, r, h);
  EXPECT_NEAR(e.kb, r * r / h, 1e-15);
  const Vec2 y(0.3, 0.3);
  EXPECT_LT((e.gb_plus(y) - 2.5 * Vec3(1, 0, 0.1)).norm(), 1e-14);
  EXPECT_LT((e.gb_minus_outside(y) + 2.5 * Vec3(1, 0, 0.2)).norm(), 1e-14);
  EXPECT_LT((e.gb_minus_inside(y) + 2.5 * Vec3(0, 0.3, 5)).norm(), 1e-14);
}

TEST(Regime, SequencesAndWeights) {
  const auto lp = default_eps_sequence(Regime::LPlus, 2.0, 4.0, {0.5, 0.25});
  EXPECT_DOUBLE_EQ(lp[1].h, 0.125);
  const auto li = default_eps_sequence(Regime::LInf, 1.0, 4.0, {0.5});
  EXPECT_NEAR(li[0].h, std::pow(0.5, 0.2), 1e-15);
  const auto lz = default_eps_sequence(Regime::LZero, 1.0, 2.0, {0.5});
  EXPECT_NEAR(lz[0].h, std::pow(0.5, 5), 1e-15);
  auto [sa, sb] = energy_weights(Regime::LPlus, 0.5, 0.25);
  EXPECT_DOUBLE_EQ(sa, 1.0);
  EXPECT_DOUBLE_EQ(sb, 1.0);
  std::tie(sa, sb) = energy_weights(Regime::LZero, 0.5, 0.01);
  EXPECT_DOUBLE_EQ(sa, 25.0);
  EXPECT_DOUBLE_EQ(sb, 1.0);
}

TEST(Regime, ViolationsListEveryProblem) {
  RegimeConfig c;
  c.regime = Regime::LInf;
  c.p = 2.0;
  c.eps = {{0.5, 0.9}, {0.5, 0.8}};
  const auto v = regime_violations(c);
  EXPECT_GE(v.size(), 2u);
  bool cites = false;
  for (const auto& s : v) cites = cites || s.find("Assume that p>2") != std::string::npos;
  EXPECT_TRUE(cites);
  EXPECT_THROW(validate(c), ConfigError);

  RegimeConfig z;
  z.regime = Regime::LZero;
  z.p = 4.0;
  z.eps = default_eps_sequence(Regime::LZero, 1.0, 4.0, {0.5, 0.25});
  const auto vz = regime_violations(z);
  ASSERT_EQ(vz.size(), 1u);
  EXPECT_NE(vz[0].find("Assume that p≤2"), std::string::npos);

  RegimeConfig ok;
  ok.eps = default_eps_sequence(Regime::LPlus, 1.0, 4.0, {1, 0.5, 0.25});
  EXPECT_NO_THROW(validate(ok));
  EXPECT_THROW(regime_from_string("lhalf"), ConfigError);
  EXPECT_EQ(regime_from_string(to_string(Regime::LZero)), Regime::LZero);
}

TEST(ReducedLoads, CrossSectionAndThicknessIntegrals) {
  ForceSystem fs;
  fs.fa = Field3::affine(Vec3(0, 0, 1), mat(1.0));
  fs.ga = Field3::constant(Vec3(1, 2, 3));
  fs.fb = Field3::affine(Vec3::Zero(), Mat3::Identity());
  const auto rl = reduced_loads(fs, Geometry{});
  // x_alpha terms integrate to zero over the symmetric square
  const Vec3 fa = rl.fbar_a(0.5);
  EXPECT_LT((fa - 0.25 * (Vec3(0, 0, 1) + 0.5 * mat(1.0).col(2))).norm(), 1e-14);
  EXPECT_LT((rl.gbar_a(0.3) - 2.0 * Vec3(1, 2, 3)).norm(), 1e-14);
  EXPECT_LT((rl.fbar_b(Vec2(0.2, -0.4)) - Vec3(0.2, -0.4, -0.5)).norm(), 1e-14);
}

TEST(Work, OutsideWeightsRemoveFootprint) {
  for (double r : {1.0, 0.5, 0.3, 0.07}) {
    const auto m = build_multistructure(Geometry{}, small(), r);
    double s = 0.0;
    for (double w : outside_weights(m)) s += w;
    EXPECT_NEAR(s, 4.0 - std::pow(2 * r * 0.25, 2), 1e-13);
  }
}

TEST(Work, RawEqualsExpandedWithJunction) {
  const ForceSystem fs = busy_loads();
  for (Regime reg : {Regime::LPlus, Regime::LInf, Regime::LZero}) {
    const double p = reg == Regime::LZero ? 2.0 : 4.0;
    for (const EpsLevel& e : default_eps_sequence(reg, 1.0, p, {0.5, 0.3, 0.15})) {
      const auto m = build_multistructure(Geometry{}, small(), e.r);
      const EpsForces ef = scale_forces(fs, reg, e.r, e.h);
      Field psi_a = poly_a(m.a, e.r);
      const Field psi_b = poly_b(m.b, e.h);
      apply_junction(psi_a, psi_b, m);
      const double ra = work_a_raw(psi_a, ef, m), xa = work_a_expanded(psi_a, ef, m);
      EXPECT_LE(std::abs(ra - xa), 1e-10 * std::max(1.0, std::abs(ra))) << to_string(reg) << " r=" << e.r;
      const double rb = work_b_raw(psi_b, ef, m), xb = work_b_expanded(psi_a, psi_b, ef, m);
      EXPECT_LE(std::abs(rb - xb), 1e-10 * std::max(1.0, std::abs(rb))) << to_string(reg) << " r=" << e.r;
    }
  }
}

TEST(Work, JunctionTermNeedsJunction) {
  ForceSystem fs;
  fs.Ghat = Field3::constant(Vec3(0, 0, 1));
  const auto m = build_multistructure(Geometry{}, small(), 0.5);
  const EpsForces ef = scale_forces(fs, Regime::LPlus, 0.5, 0.25);
  Field psi_a = poly_a(m.a, 0.5);
  const Field psi_b = poly_b(m.b, 0.25);
  apply_junction(psi_a, psi_b, m);
  const double before = work_b_expanded(psi_a, psi_b, ef, m);
  for (const auto& e : m.junction) psi_a[e.slave](2) += 1.0;
  // shifting the tube trace by e3 changes the expanded work by -(r^2/h) * abar * 1 = -abar
  EXPECT_NEAR(work_b_expanded(psi_a, psi_b, ef, m) - before, -0.25, 1e-12);
  EXPECT_NEAR(work_b_raw(psi_b, ef, m), before, 1e-12);
}

TEST(Work, LoadVectorsReproduceRawWork) {
  const ForceSystem fs = busy_loads();
  const auto m = build_multistructure(Geometry{}, small(), 0.35);
  const EpsForces ef = scale_forces(fs, Regime::LInf, 0.35, 0.6);
  std::mt19937 rng(11);
  std::normal_distribution<double> N;
  Field psi_a(m.a.nodes()), psi_b(m.b.nodes());
  for (auto& v : psi_a) v = Vec3(N(rng), N(rng), N(rng));
  for (auto& v : psi_b) v = Vec3(N(rng), N(rng), N(rng));
  const LoadVectors lv = assemble_loads(ef, m);
  double dot = 0.0;
  for (int n = 0; n < m.a.nodes(); ++n) dot += lv.la[n].dot(psi_a[n]);
  for (int n = 0; n < m.b.nodes(); ++n) dot += lv.lb[n].dot(psi_b[n]);
  EXPECT_NEAR(dot, work_a_raw(psi_a, ef, m) + work_b_raw(psi_b, ef, m), 1e-10);
}

TEST(Compatibility, BalancedPlateLoads) {
  ForceSystem fs;
  fs.fb = Field3::constant(Vec3(0, 0, 1));
  fs.gb_minus = Field3::constant(Vec3(0, 0, 1));
  fs.ghat_minus = Field3::constant(Vec3(0, 0, 1));
  const auto m = build_multistructure(Geometry{}, small(), 0.5);
  const auto rep = check_compatibility(scale_forces(fs, Regime::LPlus, 0.5, 0.25), m);
  EXPECT_TRUE(rep.ok) << rep.resultant.transpose();
  fs.gb_plus = Field3::constant(Vec3(0, 0, 1));
  const auto bad = check_compatibility(scale_forces(fs, Regime::LPlus, 0.5, 0.25), m);
  EXPECT_FALSE(bad.ok);
  EXPECT_NEAR(bad.resultant(2), 0.25 * (4.0 - 0.0625), 1e-12);
}

TEST(LimitLoad, PseudoCouplingAndFrozenParts) {
  const Geometry g;
  const LimitMeshes lm{IntervalMesh{1.0, 8}, quad_membrane(1.0, 4)};
  ForceSystem fs;
  fs.Ghat = Field3::constant(Vec3(0, 0, 2));
  LimitState s = frozen_beam(lm.interval, g);
  const LimitState pl = frozen_plate(lm.membrane);
  s.psi_b = pl.psi_b;
  s.bbar_b = pl.bbar_b;
  s.psi_a[0] = Vec3(0, 0, 1.5);
  EXPECT_NEAR(pseudo_coupling(s, fs, g), 0.25 * 2 * 1.5, 1e-15);
  EXPECT_NEAR(limit_load(Regime::LPlus, 1.0, s, fs, g, lm), -0.75, 1e-15);
  // the other regimes carry no pseudo-coupling term
  EXPECT_NEAR(limit_load(Regime::LInf, 1.0, s, fs, g, lm), 0.0, 1e-15);

  ForceSystem beam;
  beam.fa = Field3::constant(Vec3(0, 0, 1));
  beam.calGa = MatField::constant(Mat3::Identity());
  // frozen beam (0,0,x3) with moment abar I: abar/2 + 2 abar
  LimitState plate_only;
  plate_only.psi_b = pl.psi_b;
  plate_only.bbar_b = pl.bbar_b;
  EXPECT_NEAR(limit_load(Regime::LZero, 1.0, plate_only, beam, g, lm), 0.125 + 0.5, 1e-14);
  EXPECT_THROW(limit_load(Regime::LPlus, 1.0, plate_only, beam, g, lm), std::invalid_argument);
}

TEST(LimitLoad, MembraneWorkScalesWithEll) {
  const Geometry g;
  const LimitMeshes lm{IntervalMesh{1.0, 4}, quad_membrane(1.0, 4)};
  ForceSystem fs;
  fs.gb_plus = Field3::constant(Vec3(0, 0, 1));
  fs.Gb = Field3::constant(Vec3(0, 0, 0.5));
  LimitState s = frozen_beam(lm.interval, g);
  const LimitState pl = frozen_plate(lm.membrane);
  s.psi_b = pl.psi_b;
  for (auto& v : s.psi_b) v(2) = 0.1;
  s.bbar_b = pl.bbar_b;
  // int (g+ . psi + Gb . e3) = 4 (0.1 + 0.5)
  EXPECT_NEAR(limit_load(Regime::LPlus, 3.0, s, fs, g, lm), 3.0 * 2.4, 1e-13);
}

TEST(DivergenceLoads, StructureIsChecked) {
  MatField Ha, Hb;
  Ha.lin[0](0, 0) = 1.0;
  EXPECT_THROW(DivergenceLoads(Ha, Hb), ConfigError);
  MatField Ha2;
  Ha2.lin[0](0, 2) = 1.0;  // third column may vary in x_alpha
  Hb.lin[2](1, 2) = 1.0;
  EXPECT_THROW(DivergenceLoads(Ha2, Hb), ConfigError);
  EXPECT_NO_THROW(DivergenceLoads(Ha2, MatField{}));
}

namespace {

Mat3 H_of(const Vec3& x) {
  Mat3 H;
  H << x(0) * x(1), 1 + x(2), x(0) * x(0), x(2) * x(2), x(1), 2 * x(0) * x(2), 0.5, x(1) * x(2), x(0) + x(1) * x(1);
  return H;
}

}  // namespace

TEST(ForcesFromH, AffineStressIsExact) {
  HexGrid g{3, 2, 4, Vec3(-1, 0, 0), Vec3(1, 1, 2)};
  const Mat3 A = mat(0.7), B = mat(-0.2), C = mat(0.4);
  std::vector<Mat3> H;
  for (int k = 0; k <= g.nz; ++k)
    for (int j = 0; j <= g.ny; ++j)
      for (int i = 0; i <= g.nx; ++i) {
        const Vec3 x = g.position(i, j, k);
        H.push_back(Mat3::Identity() + x(0) * A + x(1) * B + x(2) * C);
      }
  const NodalLoads L = forces_from_H(H, g);
  const Vec3 div = A.col(0) + B.col(1) + C.col(2);
  for (const auto& f : L.f) EXPECT_LT((f + div).norm(), 1e-12);
  const int top = g.node(1, 1, g.nz);
  EXPECT_LT((L.g[5][top] - H[top].col(2)).norm(), 1e-14);
  EXPECT_LT((L.g[0][g.node(0, 1, 1)] + H[g.node(0, 1, 1)].col(0)).norm(), 1e-14);
  EXPECT_EQ(L.g[0][top], Vec3::Zero());
}

TEST(ForcesFromH, GreenResidualIsFirstOrder) {
  auto theta = [](const Vec3& x) { return Vec3(x(0) * x(1), std::sin(x(2)), x(0) + x(2) * x(2)); };
  auto dtheta = [](const Vec3& x) {
    Mat3 D;
    D << x(1), x(0), 0, 0, 0, std::cos(x(2)), 1, 0, 2 * x(2);
    return D;
  };
  std::vector<double> res;
  for (int n : {4, 8, 16}) {
    HexGrid g{n, n, n, Vec3(0, 0, 0), Vec3(1, 1, 1)};
    std::vector<Mat3> H;
    for (int k = 0; k <= n; ++k)
      for (int j = 0; j <= n; ++j)
        for (int i = 0; i <= n; ++i) H.push_back(H_of(g.position(i, j, k)));
    res.push_back(green_residual(H, forces_from_H(H, g), g, theta, dtheta));
  }
  for (std::size_t i = 0; i < res.size(); ++i) EXPECT_LE(res[i], 1.0 * std::pow(0.5, i + 2)) << i;
  EXPECT_LT(res[2], res[0]);
}
