#include "msr/material.hpp"

#include <algorithm>
#include <cmath>

namespace msr {

std::string to_string(DensityKind k) {
  switch (k) {
    case DensityKind::RadialQuartic: return "radial_quartic";
    case DensityKind::PWellDist: return "pwell_dist";
    case DensityKind::QuadraticConvex: return "quadratic_convex";
    case DensityKind::Custom: return "custom";
  }
  return "unknown";
}

DensityKind density_kind_from_string(const std::string& s) {
  if (s == "radial_quartic") return DensityKind::RadialQuartic;
  if (s == "pwell_dist") return DensityKind::PWellDist;
  if (s == "quadratic_convex") return DensityKind::QuadraticConvex;
  throw ConfigError("unknown density kind '" + s + "'");
}

EnergyDensity EnergyDensity::radial_quartic(double growth_C) {
  EnergyDensity W;
  W.kind = DensityKind::RadialQuartic;
  W.p = 4.0;
  W.C = W.growth_C = growth_C;
  W.name = "radial_quartic";
  return W;
}

EnergyDensity EnergyDensity::quadratic_convex(double growth_C) {
  EnergyDensity W;
  W.kind = DensityKind::QuadraticConvex;
  W.p = 2.0;
  W.C = W.growth_C = growth_C;
  W.name = "quadratic_convex";
  return W;
}

EnergyDensity EnergyDensity::pwell_dist(double p, double C, std::optional<double> delta) {
  if (!(p > 1.0)) throw ConfigError("density exponent p must exceed 1");
  if (!(C > 0.0)) throw ConfigError("density constant C must be positive");
  EnergyDensity W;
  W.kind = DensityKind::PWellDist;
  W.p = p;
  W.C = C;
  W.wells = delta ? WellSet::conformal(*delta) : WellSet::single();
  // upper: dist <= |F| + sqrt(3); lower: dist >= |F| - a with a the largest well radius
  const double a = std::max(1.0, W.wells.double_well ? W.wells.delta : 1.0) * std::sqrt(3.0);
  const double upper = std::pow(2.0, p - 1.0) * std::max(1.0, std::pow(3.0, p / 2.0)) / C;
  const double lower = std::max(std::pow(2.0, p) * C, std::pow(2.0 * a, p / 2.0));
  W.growth_C = std::max(upper, lower);
  W.name = "pwell_dist";
  return W;
}

EnergyDensity EnergyDensity::custom_fn(std::function<double(const Mat3&)> f, double p, double growth_C) {
  EnergyDensity W;
  W.kind = DensityKind::Custom;
  W.p = p;
  W.C = W.growth_C = growth_C;
  W.custom = std::move(f);
  W.name = "custom";
  return W;
}

double evaluate(const EnergyDensity& W, const Mat3& F) {
  switch (W.kind) {
    case DensityKind::RadialQuartic: {
      const double s = F.squaredNorm() - 1.0;
      return s * s;
    }
    case DensityKind::QuadraticConvex:
      return (F - Mat3::Identity()).squaredNorm();
    case DensityKind::PWellDist:
      return dist_to_wells(F, W.wells, W.p) / W.C;
    case DensityKind::Custom:
      return W.custom(F);
  }
  return 0.0;
}

Mat3 fd_gradient(const std::function<double(const Mat3&)>& f, const Mat3& F) {
  const double step = 1e-6 * (1.0 + F.norm());
  Mat3 G;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      Mat3 Fp = F, Fm = F;
      Fp(i, j) += step;
      Fm(i, j) -= step;
      G(i, j) = (f(Fp) - f(Fm)) / (2.0 * step);
    }
  return G;
}

Mat3 gradient(const EnergyDensity& W, const Mat3& F) {
  switch (W.kind) {
    case DensityKind::RadialQuartic:
      return 4.0 * (F.squaredNorm() - 1.0) * F;
    case DensityKind::QuadraticConvex:
      return 2.0 * (F - Mat3::Identity());
    case DensityKind::PWellDist: {
      // Danskin: the nearest well point is a minimizer, so d|F-P|^p/dF = p|F-P|^{p-2}(F-P).
      const Mat3 D = F - W.wells.nearest(F);
      const double d = D.norm();
      if (d == 0.0) return Mat3::Zero();
      return (W.p * std::pow(d, W.p - 2.0) / W.C) * D;
    }
    case DensityKind::Custom:
      return fd_gradient(W.custom, F);
  }
  return Mat3::Zero();
}

double evaluate(const EnergyDensity& W, const Mat3& F, Mat3* grad) {
  if (!grad) return evaluate(W, F);
  if (W.kind != DensityKind::PWellDist) {
    *grad = gradient(W, F);
    return evaluate(W, F);
  }
  const Mat3 D = F - W.wells.nearest(F);
  const double d = D.norm();
  *grad = d == 0.0 ? Mat3::Zero() : Mat3((W.p * std::pow(d, W.p - 2.0) / W.C) * D);
  return std::pow(d, W.p) / W.C;
}

GrowthReport check_p_growth(const EnergyDensity& W, const std::vector<Mat3>& samples) {
  GrowthReport rep;
  const double G = W.growth_C;
  for (const Mat3& F : samples) {
    const double w = evaluate(W, F);
    const double np = std::pow(F.norm(), W.p);
    const double slack = 1e-12 * (1.0 + std::abs(w));
    ++rep.checked;
    if (w < np / G - G - slack || w > G * (1.0 + np) + slack) {
      rep.holds = false;
      rep.witnesses.push_back(F);
    }
  }
  return rep;
}

Integrand as_integrand(const EnergyDensity& W) {
  return {[W](const Mat3& F) { return evaluate(W, F); }, [W](const Mat3& F) { return gradient(W, F); }};
}

Mat3 ScaledDensityA::map(const Mat3& M) const {
  Mat3 F = M;
  F.leftCols<2>() /= r;
  return F;
}
Mat3 ScaledDensityA::grad(const Mat3& M) const {
  Mat3 G = gradient(W, map(M));
  G.leftCols<2>() /= r;
  return G;
}
Integrand ScaledDensityA::integrand() const {
  auto self = *this;
  return {[self](const Mat3& M) { return self(M); }, [self](const Mat3& M) { return self.grad(M); }};
}

Mat3 ScaledDensityB::map(const Mat3& M) const {
  Mat3 F = M;
  F.col(2) /= h;
  return F;
}
Mat3 ScaledDensityB::grad(const Mat3& M) const {
  Mat3 G = gradient(W, map(M));
  G.col(2) /= h;
  return G;
}
Integrand ScaledDensityB::integrand() const {
  auto self = *this;
  return {[self](const Mat3& M) { return self(M); }, [self](const Mat3& M) { return self.grad(M); }};
}

ScaledDensityA scaled_density_a(const EnergyDensity& W, double r) {
  if (!(r > 0.0)) throw ConfigError("cross-section scale r must be positive");
  return {W, r};
}
ScaledDensityB scaled_density_b(const EnergyDensity& W, double h) {
  if (!(h > 0.0)) throw ConfigError("plate thickness h must be positive");
  return {W, h};
}

}  // namespace msr
