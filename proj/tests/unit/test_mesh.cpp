#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "msr/mesh.hpp"

using namespace msr;

namespace {

Resolution small() {
  Resolution r;
  r.na = 4;
  r.nz = 5;
  r.nb = 8;
  r.nh = 3;
  return r;
}

Field random_field(int n, std::mt19937& rng) {
  std::normal_distribution<double> N;
  Field f(n);
  for (auto& v : f) v = Vec3(N(rng), N(rng), N(rng));
  return f;
}

}  // namespace

TEST(HexGrid, VolumesAddUp) {
  const auto m = build_multistructure(Geometry{}, small(), 0.5);
  EXPECT_NEAR(m.a.cell_volume() * m.a.cells(), 0.25, 1e-14);
  EXPECT_NEAR(m.b.cell_volume() * m.b.cells(), 4.0, 1e-14);
}

TEST(HexGrid, GradientExactOnAffine) {
  HexGrid g{3, 4, 2, Vec3(-1, 0, 2), Vec3(1, 2, 3)};
  Mat3 A;
  A << 1, 2, 3, -1, 0.5, 4, 0, 7, -2;
  const Vec3 c(0.3, -0.1, 2);
  const Field psi = g.map_nodes([&](const Vec3& x) { return Vec3(c + A * x); });
  for (int k = 0; k < g.nz; ++k)
    for (int j = 0; j < g.ny; ++j)
      for (int i = 0; i < g.nx; ++i) EXPECT_LT((g.cell_gradient(psi, i, j, k) - A).norm(), 1e-12);
}

TEST(HexGrid, ScatterIsAdjoint) {
  HexGrid g{2, 3, 2, Vec3::Zero(), Vec3(1, 2, 0.5)};
  std::mt19937 rng(3);
  const Field psi = random_field(g.nodes(), rng);
  Mat3 P = Mat3::Random();
  Field grad(g.nodes(), Vec3::Zero());
  double lhs = 0.0;
  for (int k = 0; k < g.nz; ++k)
    for (int j = 0; j < g.ny; ++j)
      for (int i = 0; i < g.nx; ++i) {
        lhs += (P.array() * g.cell_gradient(psi, i, j, k).array()).sum();
        g.scatter_cell_gradient(P, i, j, k, grad);
      }
  double rhs = 0.0;
  for (int n = 0; n < g.nodes(); ++n) rhs += grad[n].dot(psi[n]);
  EXPECT_NEAR(lhs, rhs, 1e-10);
}

TEST(Junction, ReproducesBilinearPlateTrace) {
  const double r = 0.5;
  const auto m = build_multistructure(Geometry{}, small(), r);
  Field psi_b = m.b.map_nodes([](const Vec3& x) { return Vec3(x(0), x(1), 2.0 * x(0) * x(1)); });
  Field psi_a = m.a.map_nodes([](const Vec3&) { return Vec3(9, 9, 9); });
  apply_junction(psi_a, psi_b, m);
  // plate cell width 0.25 and r*sa = 0.125: the footprint splits cells, bilinear is still exact
  for (const auto& e : m.junction) {
    const Vec2 y = e.target;
    EXPECT_LT((psi_a[e.slave] - Vec3(y(0), y(1), 2.0 * y(0) * y(1))).norm(), 1e-14);
  }
  const int corner = m.a.node(m.a.nx, m.a.ny, 0);
  EXPECT_LT((psi_a[corner] - Vec3(0.125, 0.125, 2.0 * 0.125 * 0.125)).norm(), 1e-14);
  EXPECT_EQ(psi_a[m.a.node(0, 0, 1)], Vec3(9, 9, 9));
}

TEST(Junction, AdjointMatchesDirectional) {
  const auto m = build_multistructure(Geometry{}, small(), 0.3);
  std::mt19937 rng(5);
  const Field c_a = random_field(m.a.nodes(), rng);
  const Field psi_b = random_field(m.b.nodes(), rng);
  Field psi_a(m.a.nodes(), Vec3::Zero());
  apply_junction(psi_a, psi_b, m);
  double value = 0.0;
  for (int n = 0; n < m.a.nodes(); ++n) value += c_a[n].dot(psi_a[n]);
  Field ga = c_a, gb(m.b.nodes(), Vec3::Zero());
  junction_adjoint(ga, gb, m);
  double via_adj = 0.0;
  for (int n = 0; n < m.b.nodes(); ++n) via_adj += gb[n].dot(psi_b[n]);
  EXPECT_NEAR(value, via_adj, 1e-12);
  for (const auto& e : m.junction) EXPECT_EQ(ga[e.slave], Vec3::Zero());
}

TEST(Averages, MomentsOfClampedIdentity) {
  const double r = 0.25, h = 0.01;
  const auto m = build_multistructure(Geometry{}, small(), r);
  const Field psi_a = m.a.map_nodes([&](const Vec3& x) { return Vec3(r * x(0), r * x(1), x(2)); });
  const Field psi_b = m.b.map_nodes([&](const Vec3& x) { return Vec3(x(0), x(1), h * x(2)); });
  for (const auto& b : average_bbar_a(psi_a, r, m)) EXPECT_LT((b - 0.25 * identity_alpha()).norm(), 1e-13);
  for (const auto& b : average_bbar_b(psi_b, h, m)) EXPECT_LT((b - Vec3::UnitZ()).norm(), 1e-12);
  const Field ca = cross_section_average(psi_a, m);
  for (int k = 0; k <= m.a.nz; ++k) EXPECT_LT((ca[k] - Vec3(0, 0, m.a.position(0, 0, k)(2))).norm(), 1e-14);
  const Field tb = thickness_average(psi_b, m);
  const Vec3 x = m.b.position(2, 3, 0);
  EXPECT_LT((tb[2 + (m.b.nx + 1) * 3] - Vec3(x(0), x(1), -0.5 * h)).norm(), 1e-14);
}

TEST(Mesh, RejectsBadInput) {
  EXPECT_THROW(build_multistructure(Geometry{}, small(), 0.0), ConfigError);
  EXPECT_THROW(build_multistructure(Geometry{}, small(), 5.0), ConfigError);
  Geometry g;
  g.sa = 2.0;
  EXPECT_THROW(build_multistructure(g, small(), 0.5), ConfigError);
}

TEST(PlanarMesh, AreaAndAffineGradient) {
  for (const PlanarMesh& pm : {graded_triangulation(1.0, 12), quad_membrane(1.0, 6)}) {
    EXPECT_NEAR(pm.total_area(), 4.0, 1e-12);
    ASSERT_GE(pm.origin, 0);
    Mat3x2 A;
    A << 1, 2, -3, 0.5, 0.25, 4;
    Field psi;
    for (const Vec2& x : pm.nodes) psi.push_back(Vec3(1, 1, 1) + A * x);
    for (std::size_t e = 0; e < pm.elements.size(); ++e)
      EXPECT_LT((pm.gradient(psi, static_cast<int>(e)) - A).norm(), 1e-11);
    int nb = 0;
    for (char b : pm.boundary) nb += b;
    EXPECT_GT(nb, 0);
  }
}

TEST(PlanarMesh, GradedTowardOrigin) {
  const PlanarMesh pm = graded_triangulation(1.0, 12);
  double amin = 1e9, amax = 0.0;
  for (double a : pm.area) {
    amin = std::min(amin, a);
    amax = std::max(amax, a);
  }
  EXPECT_GT(amax / amin, 10.0);
}

TEST(Capacity, ClosedFormLogCase) {
  EXPECT_NEAR(annulus_capacity_closed_form(2.0, std::exp(-2.0)), 2.0 * std::numbers::pi, 1e-12);
}

TEST(Capacity, ClosedFormMatchesRadialIntegral) {
  // independent oracle: min over radial profiles = (int_r^{sqrt r} (2 pi s)^{-1/(p-1)} ds)^{1-p}
  for (auto [p, r] : {std::pair{1.5, 0.01}, std::pair{1.2, 0.05}, std::pair{1.8, 0.3}}) {
    const int n = 200000;
    const double a = std::log(r), b = 0.5 * std::log(r);
    double s = 0.0;
    for (int i = 0; i < n; ++i) {
      const double t = a + (i + 0.5) * (b - a) / n, x = std::exp(t);
      s += std::pow(2.0 * std::numbers::pi * x, -1.0 / (p - 1.0)) * x * (b - a) / n;
    }
    const double oracle = std::pow(s, 1.0 - p);
    EXPECT_NEAR(annulus_capacity_closed_form(p, r) / oracle, 1.0, 1e-6) << p << " " << r;
  }
}

TEST(Capacity, FemWithinTwoPercent) {
  for (auto [p, r] : {std::pair{2.0, std::exp(-2.0)}, std::pair{1.5, 0.01}, std::pair{1.2, 0.05}}) {
    const auto c = annulus_p_capacity(p, r);
    EXPECT_LT(std::abs(c.fem - c.closed_form) / c.closed_form, 0.02);
    EXPECT_GE(c.fem, c.closed_form * (1 - 1e-12));
  }
}

TEST(Capacity, RejectsOutOfRange) {
  EXPECT_THROW(annulus_capacity_closed_form(2.5, 0.1), ConfigError);
  EXPECT_THROW(annulus_capacity_closed_form(1.5, 1.0), ConfigError);
}
