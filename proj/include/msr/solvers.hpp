#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "msr/envelopes.hpp"
#include "msr/forces.hpp"
#include "msr/optimize.hpp"

namespace msr {

struct SolveOptions {
  int max_outer = 30;              // alternating sweeps in limit solves
  double tolerance = 1e-8;         // relative energy decrease that ends the sweeps
  LbfgsOptions lbfgs{.max_iterations = 10000};
  int restarts = 4;                // extra perturbed starts for nonconvex eps-solves
  int screen_iterations = 1000;    // budget of each start before the best one continues
  double restart_amplitude = 0.02;
  double slack_threshold = 1e-6;   // rows whose last decrease exceeds this are flagged
  EnvelopeOptions envelope{4, 4, 2, 2, 1e-6, 200, 20240611};
  int lift_points = 2;             // atoms per string element in the relaxed descent
  double memo_quantum = 1e-4;
  double envelope_budget = 120.0;  // seconds of estimator time per final limit evaluation
  std::uint64_t seed = 20240611;
  int threads = 1;                 // concurrent eps-solves in a study

  void validate() const;
};

// Envelope values memoized on arguments rounded to `quantum`.
class EnvelopeCache {
public:
  explicit EnvelopeCache(double quantum = 1e-4) : quantum_(quantum) {}
  double convex(const EnergyDensity& W, const Mat3& M, const EnvelopeOptions& o);
  double cross_quasiconvex(const EnergyDensity& W, const Mat3& M, const EnvelopeOptions& o);
  std::size_t size() const;
  std::size_t hits() const { return hits_; }

private:
  using Key = std::array<long long, 10>;
  Key key(const Mat3& M, int tag) const;
  double quantum_;
  mutable std::mutex mu_;
  std::map<Key, double> values_;
  std::size_t hits_ = 0;
};

// ---- epsilon level ----

struct EpsEnergy {
  double total = 0.0;
  double Fa = 0.0, Fb = 0.0;  // elastic integrals
  double La = 0.0, Lb = 0.0;  // raw works of the scaled loads
  double divergence = 0.0;    // work of H, already in the rescaled normalization
  double sa = 1.0, sb = 1.0;
};

// (r x_alpha, x3) on the tube and (x_alpha, h x3) on the plate.
EpsState identity_state(const MultiStructureMesh& m, double h);

// Throws std::runtime_error naming the element when W is not finite.
EpsEnergy eps_energy(const EpsState& s, const EnergyDensity& W, const EpsForces& ef, const MultiStructureMesh& m);

struct EpsSolution {
  EpsState state;
  EpsEnergy energy;
  LbfgsResult descent;
  double slack = 0.0;  // last accepted decrease of the best run
  bool converged = false;
  int starts = 1;
};

EpsSolution solve_eps(const EnergyDensity& W, const ForceSystem& fs, const MultiStructureMesh& m, Regime regime,
                      double h, const SolveOptions& opts = {});
EpsSolution solve_eps(const EnergyDensity& W, const ForceSystem& fs, const Geometry& g, const Resolution& res,
                      const RegimeConfig& cfg, int eps_index, const SolveOptions& opts = {});

// ---- limit problems ----

struct LimitSetup {
  Regime regime = Regime::LPlus;
  double ell = 1.0;
  double p = 4.0;  // junction constraint iff p > 2
  Geometry geom;
  LimitMeshes meshes;
  LoadQuadrature q;
};
// Interval of res.interval elements and the graded triangulation.
LimitSetup default_limit_setup(const RegimeConfig& cfg, const Geometry& g, const Resolution& res);
// Interval and membrane matching the tube layers and the plate columns of the hex meshes.
LimitSetup matched_limit_setup(const RegimeConfig& cfg, const Geometry& g, const Resolution& res);

// Clamped identity limit state: (0,0,x3) with abar I_alpha, (x_alpha,0) with e3.
LimitState natural_limit_state(const LimitSetup& s);

struct LimitEnergy {
  double total = 0.0;
  double string = 0.0, membrane = 0.0, load = 0.0;
  bool budget_limited = false;  // some envelope values fell back to W
};

// Envelope-based limit functional; convex densities are their own envelopes.
LimitEnergy limit_energy(const LimitState& s, const EnergyDensity& W, const ForceSystem& fs, const LimitSetup& setup,
                         EnvelopeCache& cache, const SolveOptions& opts = {});
LimitEnergy limit_energy_lplus(const LimitState& s, const EnergyDensity& W, const ForceSystem& fs,
                               const Geometry& g, double ell, const LimitMeshes& lm, EnvelopeCache& cache,
                               const SolveOptions& opts = {});

struct LimitSolution {
  LimitState state;
  double energy = 0.0;          // envelope evaluation of the final state
  double descent_energy = 0.0;  // relaxed value reached by the alternating descent
  std::vector<double> history;  // after every half-step
  int sweeps = 0;
  bool converged = false;
  bool budget_limited = false;
};
LimitSolution solve_limit(const EnergyDensity& W, const ForceSystem& fs, const LimitSetup& setup,
                          const SolveOptions& opts = {});

// Radially symmetric convex hull of inf_b W(b|zeta), tabulated along |zeta|.
class RadialHull {
public:
  RadialHull(const EnergyDensity& W, double t_max = 4.0, int samples = 2001);
  double value(double t) const;
  double slope(double t) const;
  double max_arg() const { return t_.back(); }

private:
  std::vector<double> t_, v_, s_;  // nodes, hull values, C1 slopes
  std::vector<double> mids_;       // hull slopes per interval
};

struct StringSolution {
  Field psi;
  std::vector<Mat3x2> bbar;
  double energy = 0.0;
  bool converged = false;
};
// Two-end data (0,0,0) and (0,0,L). Without bending the moments are eliminated analytically,
// which needs calG^a = 0.
StringSolution solve_string(const EnergyDensity& W, const ForceSystem& fs, const Geometry& g, const IntervalMesh& im,
                            const SolveOptions& opts, bool with_bending, const LoadQuadrature& q = {});

// ---- diagnostics ----

enum class Side { A, B };
struct RigidityReport {
  Mat3 M_best = Mat3::Identity();
  double lhs = 0.0;           // ||D - M||_p^p
  double rhs_distance = 0.0;  // ||dist(D,K)||_p^p
  double ratio = 0.0;
};
// D = (scale^{-1} grad_alpha | grad_3) on side A, (grad_alpha | scale^{-1} grad_3) on side B.
RigidityReport rigidity_check(const Field& psi, const HexGrid& g, const WellSet& K, double scale, Side side,
                              double p);
// Tube deformation bent along x3 inside the well delta*SO(3): delta (R(x3)(r x_alpha,0) + gamma(x3)).
Field bent_well_state(const HexGrid& g, double r, double delta, double curvature);

struct DivergenceCheck {
  std::vector<double> r, gap;
};
// divergence_work_eps on perturbed identity fields versus divergence_work on their extracted limit fields.
DivergenceCheck divergence_consistency(const DivergenceLoads& H, Regime regime, const Geometry& g,
                                       const Resolution& res, const std::vector<EpsLevel>& eps);

struct GammaRow {
  double r = 0.0, h = 0.0;
  double energy = 0.0, gap = 0.0;
  double bbar_a_norm = 0.0, bbar_b_norm = 0.0;
  double dist_bbar_a = 0.0, dist_bbar_b = 0.0, dist_psi_a = 0.0, dist_psi_b = 0.0;
  double plate_dev = 0.0;         // ||psi_b - (x_alpha,0)||
  double plate_normal_dev = 0.0;  // ||h^{-1} d3 psi_b - e3||
  double tube_inplane_dev = 0.0;  // ||r^{-1} grad_alpha psi_a - I_alpha||
  double slack = 0.0;
  bool converged = true;
  bool flagged = false;
};
struct GammaReport {
  Regime regime = Regime::LPlus;
  double p = 2.0;
  std::vector<GammaRow> rows;
  double limit_energy = 0.0;
  bool limit_converged = true;
  bool limit_budget_limited = false;
  LimitState limit_state;
  std::string to_csv() const;
  std::string to_json() const;
};
GammaReport gamma_study(const EnergyDensity& W, const ForceSystem& fs, const RegimeConfig& cfg, const Geometry& g,
                        const Resolution& res, const SolveOptions& opts = {});

}  // namespace msr
