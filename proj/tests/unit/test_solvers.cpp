#include <gtest/gtest.h>

#include <nlohmann/json.hpp>

#include <cmath>
#include <random>

#include "msr/solvers.hpp"

using namespace msr;

namespace {

Resolution tiny() {
  Resolution r;
  r.na = 2;
  r.nz = 4;
  r.nb = 6;
  r.nh = 2;
  r.interval = 16;
  r.tri_squares = 6;
  return r;
}

SolveOptions quick() {
  SolveOptions o;
  o.restarts = 0;
  o.max_outer = 10;
  o.envelope_budget = 5.0;
  return o;
}

ForceSystem light_loads() {
  ForceSystem fs;
  fs.fa = Field3::constant(Vec3(0.3, -0.1, 0.2));
  fs.gb_plus = Field3::constant(Vec3(0.0, 0.05, 0.1));
  fs.fb = Field3::constant(Vec3(0.02, 0.0, -0.05));
  return fs;
}

}  // namespace

TEST(EpsEnergy, IdentityIsNaturalWithoutLoads) {
  const auto m = build_multistructure(Geometry{}, tiny(), 0.5);
  const EpsForces ef = scale_forces(ForceSystem{}, Regime::LPlus, 0.5, 0.25);
  for (const auto& W : {EnergyDensity::quadratic_convex(), EnergyDensity::pwell_dist(2.0)}) {
    const EpsEnergy e = eps_energy(identity_state(m, 0.25), W, ef, m);
    EXPECT_NEAR(e.total, 0.0, 1e-13);
    EXPECT_NEAR(e.sb, 1.0, 0.0);
  }
}

TEST(EpsEnergy, NonFiniteDensityNamesTheElement) {
  const auto m = build_multistructure(Geometry{}, tiny(), 0.5);
  const EpsForces ef = scale_forces(ForceSystem{}, Regime::LPlus, 0.5, 0.25);
  const auto W = EnergyDensity::custom_fn([](const Mat3& F) { return F(2, 2) > 0.5 ? NAN : 0.0; }, 2.0, 1.0);
  try {
    eps_energy(identity_state(m, 0.25), W, ef, m);
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("tube element"), std::string::npos);
  }
}

TEST(EpsEnergy, QuadraticStateByHand) {
  // one tube cell displaced affinely: W = |F - I|^2 integrates to vol * |A|^2
  Resolution res = tiny();
  const double r = 0.5, h = 0.25;
  const auto m = build_multistructure(Geometry{}, res, r);
  EpsState s = identity_state(m, h);
  Mat3 A;
  A << 0.1, 0.0, 0.02, 0.0, -0.05, 0.0, 0.03, 0.0, 0.04;
  for (int n = 0; n < m.a.nodes(); ++n) {
    const Vec3 x = m.a.position(n % (m.a.nx + 1), (n / (m.a.nx + 1)) % (m.a.ny + 1), n / ((m.a.nx + 1) * (m.a.ny + 1)));
    s.psi_a[n] += A * Vec3(r * x(0), r * x(1), x(2));
  }
  const EpsForces ef = scale_forces(ForceSystem{}, Regime::LPlus, r, h);
  const EpsEnergy e = eps_energy(s, EnergyDensity::quadratic_convex(), ef, m);
  EXPECT_NEAR(e.Fa, 0.25 * A.squaredNorm(), 1e-12);
  EXPECT_NEAR(e.Fb, 0.0, 1e-14);
}

TEST(SolveEps, ZeroLoadsStayNatural) {
  const auto m = build_multistructure(Geometry{}, tiny(), 0.5);
  const EpsSolution s = solve_eps(EnergyDensity::quadratic_convex(), ForceSystem{}, m, Regime::LPlus, 0.25, quick());
  EXPECT_NEAR(s.energy.total, 0.0, 1e-12);
  EXPECT_TRUE(s.converged);
}

TEST(SolveEps, MinimizerIsStationary) {
  const double r = 0.5, h = 0.25;
  const auto m = build_multistructure(Geometry{}, tiny(), r);
  const auto W = EnergyDensity::quadratic_convex();
  const ForceSystem fs = light_loads();
  const EpsSolution s = solve_eps(W, fs, m, Regime::LPlus, h, quick());
  ASSERT_TRUE(s.converged);
  EXPECT_LT(s.energy.total, 0.0);
  const EpsForces ef = scale_forces(fs, Regime::LPlus, r, h);
  // free plate node away from the junction: central differences of the public energy vanish
  const int n = m.b.node(1, 1, 1);
  for (int c = 0; c < 3; ++c) {
    EpsState p = s.state, q = s.state;
    const double t = 1e-5;
    p.psi_b[n](c) += t;
    q.psi_b[n](c) -= t;
    const double d = (eps_energy(p, W, ef, m).total - eps_energy(q, W, ef, m).total) / (2 * t);
    EXPECT_NEAR(d, 0.0, 1e-6);
  }
  // junction still holds at the returned state
  EpsState j = s.state;
  apply_junction(j.psi_a, j.psi_b, m);
  for (int k = 0; k < m.a.nodes(); ++k) EXPECT_LT((j.psi_a[k] - s.state.psi_a[k]).norm(), 1e-14);
}

TEST(SolveLimit, NaturalStateWithoutLoads) {
  RegimeConfig cfg;
  const LimitSetup setup = matched_limit_setup(cfg, Geometry{}, tiny());
  EnvelopeCache cache;
  const auto W = EnergyDensity::quadratic_convex();
  EXPECT_NEAR(limit_energy(natural_limit_state(setup), W, ForceSystem{}, setup, cache).total, 0.0, 1e-14);
  const LimitSolution sol = solve_limit(W, ForceSystem{}, setup, quick());
  EXPECT_NEAR(sol.energy, 0.0, 1e-12);
  EXPECT_TRUE(sol.converged);
}

TEST(SolveLimit, ConstantMomentLoadOnString) {
  // W = |F-I|^2, calG^a = E11: per unit length min_b abar|b/abar - I|^2 - G:b = -abar (G:I + |G|^2/4)
  RegimeConfig cfg;
  cfg.regime = Regime::LInf;
  cfg.p = 4.0;
  const LimitSetup setup = default_limit_setup(cfg, Geometry{}, tiny());
  ForceSystem fs;
  fs.calGa.c0(0, 0) = 1.0;
  const LimitSolution sol = solve_limit(EnergyDensity::quadratic_convex(), fs, setup, quick());
  EXPECT_NEAR(sol.energy, -0.25 * 1.25, 1e-8);
  EXPECT_NEAR(sol.state.bbar_a[3](0, 0), 0.25 * 1.5, 1e-6);
  for (std::size_t i = 1; i < sol.history.size(); ++i) EXPECT_LE(sol.history[i], sol.history[i - 1] + 1e-12);
}

TEST(SolveLimit, RegimeHypothesesAreChecked) {
  RegimeConfig cfg;
  cfg.regime = Regime::LInf;
  cfg.p = 2.0;
  const LimitSetup setup = default_limit_setup(cfg, Geometry{}, tiny());
  try {
    solve_limit(EnergyDensity::quadratic_convex(), ForceSystem{}, setup, quick());
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("Assume that p>2"), std::string::npos);
  }
}

TEST(RadialHull, QuarticIsAlreadyConvexAlongRays) {
  // inf_b (|b|^2 + t^2 - 1)^2 = ((t^2 - 1)^+)^2
  const RadialHull hull(EnergyDensity::radial_quartic(), 3.0, 1201);
  for (double t : {0.0, 0.4, 0.99, 1.3, 2.0, 2.9}) {
    const double o = std::pow(std::max(t * t - 1.0, 0.0), 2);
    EXPECT_NEAR(hull.value(t), o, 2e-4 * std::max(1.0, o)) << t;
    const double so = t > 1.0 ? 4.0 * t * (t * t - 1.0) : 0.0;
    EXPECT_NEAR(hull.slope(t), so, 2e-2 * std::max(1.0, so)) << t;
  }
}

TEST(RadialHull, TwoWellSliceGetsConvexified) {
  const auto W = EnergyDensity::pwell_dist(2.0, 1.0, 1.3);
  const RadialHull hull(W, 3.0, 601);
  double prev_slope = -1.0;
  // the C1 smoothing of the hull overshoots by O(dt^2) where the slice is curved
  for (double t = 0.0; t < 2.9; t += 0.05) {
    EXPECT_LE(hull.value(t), reduced_W0(W, Vec3(0, 0, t), 4).value + 1e-4);
    EXPECT_GE(hull.slope(t), prev_slope - 1e-9);
    prev_slope = hull.slope(t);
  }
  // between the wells the slice has a bump that the hull removes
  EXPECT_NEAR(hull.value(1.15), 0.0, 1e-6);
}

TEST(SolveString, QuadraticMatchesClosedForm) {
  // W = |F-I|^2, abar = 1/4, constant fa: psi = x e3 + F x(L-x)/(4 abar), E = -|F|^2 L^3/(48 abar) - F3 L^2/2
  const Geometry g;
  const IntervalMesh im{g.L, 64};
  ForceSystem fs;
  fs.fa = Field3::constant(Vec3(0.4, 0.0, 0.2));
  const Vec3 F = 0.25 * Vec3(0.4, 0.0, 0.2);
  const double oracle = -F.squaredNorm() / (48.0 * 0.25) - F(2) / 2.0;
  const auto W = EnergyDensity::quadratic_convex();
  const StringSolution a = solve_string(W, fs, g, im, quick(), false);
  const StringSolution b = solve_string(W, fs, g, im, quick(), true);
  EXPECT_NEAR(a.energy, oracle, 1e-3 * std::abs(oracle));
  EXPECT_NEAR(a.energy, b.energy, 1e-8);
  EXPECT_NEAR(a.psi[32](0), 0.1 * 0.25 / 1.0, 1e-6);
  EXPECT_THROW(
      {
        ForceSystem bad = fs;
        bad.calGa.c0(0, 0) = 1.0;
        solve_string(W, bad, g, im, quick(), false);
      },
      ConfigError);
}

TEST(Rigidity, RotationHasNoDefect) {
  const auto m = build_multistructure(Geometry{}, tiny(), 0.5);
  const WellSet K{true, 1.3};
  const Field psi = bent_well_state(m.a, 0.5, 1.0, 0.0);
  const RigidityReport rep = rigidity_check(psi, m.a, K, 0.5, Side::A, 2.0);
  EXPECT_NEAR(rep.lhs, 0.0, 1e-14);
  EXPECT_EQ(rep.ratio, 0.0);
}

TEST(Rigidity, BentTubeRatioGrowsAsTheTubeThins) {
  Resolution res = tiny();
  res.nz = 32;
  const WellSet K{true, 1.3};
  double prev = 0.0;
  for (double r : {0.5, 0.25, 0.125}) {
    const auto m = build_multistructure(Geometry{}, res, r);
    const RigidityReport rep = rigidity_check(bent_well_state(m.a, r, 1.3, 1.0), m.a, K, r, Side::A, 2.0);
    EXPECT_NEAR((rep.M_best / 1.3).determinant(), 1.0, 1e-10);
    if (prev > 0.0) EXPECT_GT(rep.ratio, 2.0 * prev);
    prev = rep.ratio;
  }
}

TEST(Divergence, LimitFieldsReproduceTheWork) {
  MatField Ha, Hb;
  Ha.c0 << 0.3, 0.1, 0.2, -0.2, 0.4, 0.1, 0.1, 0.0, 0.5;
  Ha.lin[0].col(2) = Vec3(0.5, -0.3, 0.2);
  Ha.lin[2] << 0.2, 0.0, 0.1, 0.0, -0.1, 0.0, 0.3, 0.1, 0.0;
  Hb.c0 << 0.1, 0.2, 0.3, 0.0, -0.1, 0.2, 0.4, 0.1, 0.1;
  Hb.lin[2].leftCols<2>() << 0.5, 0.1, -0.2, 0.3, 0.1, 0.0;
  Hb.lin[0].col(2) = Vec3(0.2, 0.0, -0.1);
  const DivergenceLoads H(Ha, Hb);
  Resolution res = tiny();
  res.na = 4;
  const auto chk = divergence_consistency(H, Regime::LPlus, Geometry{}, res, {{0.5, 0.25}, {0.25, 0.0625}, {0.125, 1.0 / 64}});
  ASSERT_EQ(chk.gap.size(), 3u);
  EXPECT_GT(chk.gap[0], chk.gap[1]);
  EXPECT_GT(chk.gap[1], chk.gap[2]);
}

TEST(GammaStudy, ReportsSerialize) {
  RegimeConfig cfg;
  cfg.regime = Regime::LPlus;
  cfg.p = 4.0;
  for (double r : {0.5, 0.25, 0.125}) cfg.eps.push_back({r, r * r});
  const GammaReport rep = gamma_study(EnergyDensity::quadratic_convex(), light_loads(), cfg, Geometry{}, tiny(), quick());
  ASSERT_EQ(rep.rows.size(), 3u);
  const std::string csv = rep.to_csv();
  EXPECT_EQ(csv.substr(0, 9), "r,h,energ");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
  const auto j = nlohmann::json::parse(rep.to_json());
  EXPECT_EQ(j["regime"], "lplus");
  EXPECT_EQ(j["rows"].size(), 3u);
  for (const GammaRow& row : rep.rows) EXPECT_FALSE(row.flagged);
}
