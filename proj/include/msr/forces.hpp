#pragma once

#include <optional>
#include <string>
#include <vector>

#include "msr/mesh.hpp"

namespace msr {

// c + A x + amp * sin(k.x + phase)
struct Field3 {
  Vec3 c = Vec3::Zero();
  Mat3 A = Mat3::Zero();
  Vec3 amp = Vec3::Zero();
  Vec3 k = Vec3::Zero();
  double phase = 0.0;

  static Field3 constant(const Vec3& v) { Field3 f; f.c = v; return f; }
  static Field3 affine(const Vec3& c, const Mat3& A) { Field3 f; f.c = c; f.A = A; return f; }
  Vec3 operator()(const Vec3& x) const { return c + A * x + amp * std::sin(k.dot(x) + phase); }
  Vec3 at(const Vec2& y) const { return (*this)(Vec3(y(0), y(1), 0.0)); }
  bool is_zero() const { return c.isZero(0) && A.isZero(0) && amp.isZero(0); }
};

// C0 + sum_i x_i C_i
struct MatField {
  Mat3 c0 = Mat3::Zero();
  std::array<Mat3, 3> lin{Mat3::Zero(), Mat3::Zero(), Mat3::Zero()};

  static MatField constant(const Mat3& M) { MatField f; f.c0 = M; return f; }
  Mat3 operator()(const Vec3& x) const { return c0 + x(0) * lin[0] + x(1) * lin[1] + x(2) * lin[2]; }
  Mat3 at_x3(double x3) const { return c0 + x3 * lin[2]; }
  bool is_zero() const { return c0.isZero(0) && lin[0].isZero(0) && lin[1].isZero(0) && lin[2].isZero(0); }
};

// H^a with in-plane columns depending on x3 only, H^b with third column depending on x_alpha only.
class DivergenceLoads {
public:
  DivergenceLoads() = default;
  // throws ConfigError when the structure above is violated
  DivergenceLoads(const MatField& Ha, const MatField& Hb);
  const MatField& Ha() const { return Ha_; }
  const MatField& Hb() const { return Hb_; }
  Mat3x2 Ha_alpha(double x3) const { return in_plane(Ha_.at_x3(x3)); }
  Vec3 Ha3(const Vec3& x) const { return normal_col(Ha_(x)); }
  Mat3x2 Hb_alpha(const Vec3& x) const { return in_plane(Hb_(x)); }
  Vec3 Hb3(const Vec2& y) const { return normal_col(Hb_(Vec3(y(0), y(1), 0.0))); }

private:
  MatField Ha_, Hb_;
};

// Base load densities; two-dimensional fields are evaluated at (x_alpha, 0).
// The tube surface load G^a = calG^a(x3) nu is only ever formed inside surface quadrature.
struct ForceSystem {
  Field3 fa, ga, fb, gb_plus, gb_minus, Gb, ghat_minus, Ghat;
  MatField calGa;
  std::optional<DivergenceLoads> H;

  void validate() const;
  bool is_zero() const;
};

enum class Regime { LPlus, LInf, LZero };
std::string to_string(Regime r);
Regime regime_from_string(const std::string& s);

struct EpsLevel {
  double r = 1.0, h = 1.0;
};

struct RegimeConfig {
  Regime regime = Regime::LPlus;
  double ell = 1.0;
  double p = 4.0;
  std::vector<EpsLevel> eps;
};
// Every violated hypothesis, empty when valid.
std::vector<std::string> regime_violations(const RegimeConfig& c);
void validate(const RegimeConfig& c);

// (r, h) list from r values: h = ell r^2 (LPlus), r^{1/(p+1)} (LInf), r^{p+3} (LZero).
std::vector<EpsLevel> default_eps_sequence(Regime regime, double ell, double p, const std::vector<double>& rs);

// Energy weights (s_a, s_b) with E = s_a (F^a - L^a) + s_b (F^b - L^b).
std::pair<double, double> energy_weights(Regime regime, double r, double h);

// epsilon-level densities: tube loads carry ka, plate loads kb.
struct EpsForces {
  ForceSystem fs;
  Regime regime = Regime::LPlus;
  double r = 1.0, h = 1.0;
  double ka = 1.0, kb = 1.0;

  Vec3 fa(const Vec3& x) const { return ka * fs.fa(x); }
  Vec3 ga(const Vec3& x, const Vec3& nu) const { return ka * (r * fs.ga(x) + fs.calGa.at_x3(x(2)) * nu); }
  Vec3 fb(const Vec3& x) const { return kb * fs.fb(x); }
  Vec3 gb_plus(const Vec2& y) const { return kb * (h * fs.gb_plus.at(y) + fs.Gb.at(y)); }
  Vec3 gb_minus_outside(const Vec2& y) const { return -kb * (h * fs.gb_minus.at(y) + fs.Gb.at(y)); }
  Vec3 gb_minus_inside(const Vec2& y) const { return -kb * (h * fs.ghat_minus.at(y) + fs.Ghat.at(y)); }
};
EpsForces scale_forces(const ForceSystem& fs, const RegimeConfig& cfg, int eps_index);
EpsForces scale_forces(const ForceSystem& fs, Regime regime, double r, double h);

// Composite midpoint points per side of omega_a and across the plate thickness.
struct LoadQuadrature {
  int cross = 8;
  int thick = 6;
};

// f^a integrated over omega_a, g^a over its boundary, f^b over (-1,0).
struct ReducedLoads {
  ForceSystem fs;
  Geometry geom;
  LoadQuadrature q;
  Vec3 fbar_a(double x3) const;
  Vec3 gbar_a(double x3) const;
  Vec3 fbar_b(const Vec2& y) const;
};
ReducedLoads reduced_loads(const ForceSystem& fs, const Geometry& g, const LoadQuadrature& q = {});

// Work of the tube loads: raw (body + r^{-1} surface) and expanded (surface G^a traded for b^a moments).
double work_a_raw(const Field& psi_a, const EpsForces& ef, const MultiStructureMesh& m);
double work_a_expanded(const Field& psi_a, const EpsForces& ef, const MultiStructureMesh& m);
// Work of the plate loads: raw and the junction-expanded form (needs the tube bottom trace).
double work_b_raw(const Field& psi_b, const EpsForces& ef, const MultiStructureMesh& m);
double work_b_expanded(const Field& psi_a, const Field& psi_b, const EpsForces& ef, const MultiStructureMesh& m);

// Gradients of the raw work functionals (constant vectors): work = sum la.psi_a + sum lb.psi_b.
struct LoadVectors {
  Field la, lb;
};
LoadVectors assemble_loads(const EpsForces& ef, const MultiStructureMesh& m);

// Weight of each plate top cell outside the closed square r*omega_a (cell area minus overlap).
std::vector<double> outside_weights(const MultiStructureMesh& m);

// Load part of the limit energies (energy = elastic - limit_load). LInf takes the string part of the
// state only, LZero the membrane part only.
struct LimitMeshes {
  IntervalMesh interval;
  PlanarMesh membrane;
};
double limit_load(Regime regime, double ell, const LimitState& s, const ForceSystem& fs, const Geometry& g,
                  const LimitMeshes& lm, const LoadQuadrature& q = {});
// Generic load terms on the string and on the membrane (the latter without the factor ell).
double string_work(const Field& psi_a, const std::vector<Mat3x2>& bbar_a, const ReducedLoads& rl,
                   const IntervalMesh& im);
double membrane_work(const Field& psi_b, const std::vector<Vec3>& bbar_b, const ReducedLoads& rl,
                     const PlanarMesh& pm);
// Frozen rigid parts: plate (x_alpha, 0) with moment e3, and beam (0, 0, x3) with moment abar I_alpha.
LimitState frozen_plate(const PlanarMesh& pm);
LimitState frozen_beam(const IntervalMesh& im, const Geometry& g);
// Pseudo-coupling term abar * Ghat(0) . psi_a(0).
double pseudo_coupling(const LimitState& s, const ForceSystem& fs, const Geometry& g);

// Divergence-form limit work and its epsilon-level raw counterpart.
double divergence_work(const DivergenceLoads& H, const LimitState& s, const Geometry& g, const LimitMeshes& lm,
                       const LoadQuadrature& q = {});
double divergence_work_eps(const DivergenceLoads& H, const EpsState& s, double r, double h,
                           const MultiStructureMesh& m);

// f = -div H (rows), g = H nu on the six box faces (order x-, x+, y-, y+, z-, z+).
struct NodalLoads {
  Field f;
  std::array<Field, 6> g;
};
NodalLoads forces_from_H(const std::vector<Mat3>& H, const HexGrid& grid);
// |int H : grad theta - int f . theta - int g . theta| with nodal trapezoid quadrature.
double green_residual(const std::vector<Mat3>& H, const NodalLoads& loads, const HexGrid& grid,
                      const std::function<Vec3(const Vec3&)>& theta,
                      const std::function<Mat3(const Vec3&)>& grad_theta);

struct CompatibilityReport {
  bool ok = true;
  Vec3 resultant = Vec3::Zero();
};
// Net force on the physical body, using the Jacobians r^2 (tube volume), r (tube lateral), h (plate volume).
CompatibilityReport check_compatibility(const EpsForces& ef, const MultiStructureMesh& m, double tol = 1e-10);

}  // namespace msr
