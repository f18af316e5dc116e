#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "msr/tensor.hpp"

namespace msr {

enum class DensityKind { RadialQuartic, PWellDist, QuadraticConvex, Custom };

std::string to_string(DensityKind k);
DensityKind density_kind_from_string(const std::string& s);

// Stored-energy density W on 3x3 matrices with p-growth.
//
// For PWellDist the constant `C` is the coercivity divisor in
// W = dist^p(F, K) / C. The p-growth bound (1/G)|F|^p - G <= W <= G(1+|F|^p)
// needs its own constant G for that kind (a single C cannot serve both
// roles), so it is kept separately in `growth_C`.
struct EnergyDensity {
  DensityKind kind = DensityKind::QuadraticConvex;
  double p = 2.0;
  double C = 1.0;
  double growth_C = 6.0;
  WellSet wells;
  std::function<double(const Mat3&)> custom;
  std::string name;

  static EnergyDensity radial_quartic(double growth_C = 4.0);
  static EnergyDensity quadratic_convex(double growth_C = 6.0);
  static EnergyDensity pwell_dist(double p, double C = 1.0, std::optional<double> delta = 1.3);
  static EnergyDensity custom_fn(std::function<double(const Mat3&)> f, double p, double growth_C);

  double conjugate_exponent() const { return p / (p - 1.0); }
  // Convex kinds are their own convex and cross-quasiconvex-convex envelopes.
  bool is_convex() const { return kind == DensityKind::QuadraticConvex; }
};

double evaluate(const EnergyDensity& W, const Mat3& F);
Mat3 gradient(const EnergyDensity& W, const Mat3& F);
// Value, and the gradient into *grad when non-null, sharing one well projection.
double evaluate(const EnergyDensity& W, const Mat3& F, Mat3* grad);
Mat3 fd_gradient(const std::function<double(const Mat3&)>& f, const Mat3& F);

struct GrowthReport {
  bool holds = true;
  std::vector<Mat3> witnesses;
  std::size_t checked = 0;
};
GrowthReport check_p_growth(const EnergyDensity& W, const std::vector<Mat3>& samples);

// Any integrand usable by the envelope routines.
struct Integrand {
  std::function<double(const Mat3&)> value;
  std::function<Mat3(const Mat3&)> grad;
};
Integrand as_integrand(const EnergyDensity& W);

// M -> W(r^{-1} M_alpha | M_3)
struct ScaledDensityA {
  EnergyDensity W;
  double r;
  Mat3 map(const Mat3& M) const;
  double operator()(const Mat3& M) const { return evaluate(W, map(M)); }
  Mat3 grad(const Mat3& M) const;
  Integrand integrand() const;
};
// M -> W(M_alpha | h^{-1} M_3)
struct ScaledDensityB {
  EnergyDensity W;
  double h;
  Mat3 map(const Mat3& M) const;
  double operator()(const Mat3& M) const { return evaluate(W, map(M)); }
  Mat3 grad(const Mat3& M) const;
  Integrand integrand() const;
};

ScaledDensityA scaled_density_a(const EnergyDensity& W, double r);
ScaledDensityB scaled_density_b(const EnergyDensity& W, double h);

}  // namespace msr
