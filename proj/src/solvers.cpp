#include "msr/solvers.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <future>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>

namespace msr {

void SolveOptions::validate() const {
  if (!(tolerance > 0.0)) throw ConfigError("solver: tolerance must be positive");
  if (max_outer < 1) throw ConfigError("solver: max_outer must be at least 1");
  if (restarts < 0) throw ConfigError("solver: restarts must be non-negative");
  if (screen_iterations < 1) throw ConfigError("solver: screen_iterations must be positive");
  if (lift_points < 1 || lift_points > 10) throw ConfigError("solver: lift_points must lie in 1..10");
  if (!(memo_quantum > 0.0)) throw ConfigError("solver: memo_quantum must be positive");
  if (threads < 1) throw ConfigError("solver: threads must be at least 1");
}

// ---------------------------------------------------------------- envelope cache

EnvelopeCache::Key EnvelopeCache::key(const Mat3& M, int tag) const {
  Key k{};
  for (int i = 0; i < 9; ++i) k[i] = std::llround(M(i % 3, i / 3) / quantum_);
  k[9] = tag;
  return k;
}

double EnvelopeCache::convex(const EnergyDensity& W, const Mat3& M, const EnvelopeOptions& o) {
  if (W.is_convex()) return evaluate(W, M);
  const Key k = key(M, 0);
  {
    std::lock_guard<std::mutex> lock(mu_);
    if (auto it = values_.find(k); it != values_.end()) {
      ++hits_;
      return it->second;
    }
  }
  const double v = std::min(evaluate(W, M), convex_envelope(W, M, o).value);
  std::lock_guard<std::mutex> lock(mu_);
  values_[k] = v;
  return v;
}

double EnvelopeCache::cross_quasiconvex(const EnergyDensity& W, const Mat3& M, const EnvelopeOptions& o) {
  if (W.is_convex()) return evaluate(W, M);
  const Key k = key(M, 1);
  {
    std::lock_guard<std::mutex> lock(mu_);
    if (auto it = values_.find(k); it != values_.end()) {
      ++hits_;
      return it->second;
    }
  }
  const double v = std::min(evaluate(W, M), cell_qcw(W, M, o).value);
  std::lock_guard<std::mutex> lock(mu_);
  values_[k] = v;
  return v;
}

std::size_t EnvelopeCache::size() const {
  std::lock_guard<std::mutex> lock(mu_);
  return values_.size();
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double frob(const Mat3& A, const Mat3& B) { return (A.array() * B.array()).sum(); }

Mat3 scale_cols_a(const Mat3& D, double r) {
  Mat3 M = D;
  M.leftCols<2>() /= r;
  return M;
}

Mat3 scale_col_b(const Mat3& D, double h) {
  Mat3 M = D;
  M.col(2) /= h;
  return M;
}

// Energy of one eps-state; fills nodal gradients when ga/gb are non-null.
double eps_core(const EpsState& s, const EnergyDensity& W, const EpsForces& ef, const MultiStructureMesh& m,
                const LoadVectors& lv, Field* ga, Field* gb, EpsEnergy* parts, bool throw_on_nan) {
  const auto [sa, sb] = energy_weights(ef.regime, ef.r, ef.h);
  const DivergenceLoads* H = ef.fs.H ? &*ef.fs.H : nullptr;
  double Fa = 0.0, Fb = 0.0, La = 0.0, Lb = 0.0, div = 0.0;
  auto fail = [&](const char* part, int id) {
    if (throw_on_nan)
      throw std::runtime_error(std::string("non-finite energy density in ") + part + " element " + std::to_string(id));
    return std::numeric_limits<double>::quiet_NaN();
  };

  const HexGrid& a = m.a;
  const double va = a.cell_volume();
  for (int k = 0; k < a.nz; ++k)
    for (int j = 0; j < a.ny; ++j)
      for (int i = 0; i < a.nx; ++i) {
        const Mat3 M = scale_cols_a(a.cell_gradient(s.psi_a, i, j, k), ef.r);
        Mat3 dW;
        const double w = evaluate(W, M, ga ? &dW : nullptr);
        if (!std::isfinite(w)) return fail("tube", a.cell(i, j, k));
        Fa += va * w;
        Mat3 P = Mat3::Zero();
        if (ga) P = sa * va * scale_cols_a(dW, ef.r);
        if (H) {
          const Mat3 Hc = H->Ha()(a.cell_center(i, j, k));
          div += va * frob(Hc, M);
          if (ga) P -= va * scale_cols_a(Hc, ef.r);
        }
        if (ga) a.scatter_cell_gradient(P, i, j, k, *ga);
      }
  const HexGrid& b = m.b;
  const double vb = b.cell_volume();
  for (int k = 0; k < b.nz; ++k)
    for (int j = 0; j < b.ny; ++j)
      for (int i = 0; i < b.nx; ++i) {
        const Mat3 M = scale_col_b(b.cell_gradient(s.psi_b, i, j, k), ef.h);
        Mat3 dW;
        const double w = evaluate(W, M, gb ? &dW : nullptr);
        if (!std::isfinite(w)) return fail("plate", b.cell(i, j, k));
        Fb += vb * w;
        Mat3 P = Mat3::Zero();
        if (gb) P = sb * vb * scale_col_b(dW, ef.h);
        if (H) {
          const Mat3 Hc = H->Hb()(b.cell_center(i, j, k));
          div += vb * frob(Hc, M);
          if (gb) P -= vb * scale_col_b(Hc, ef.h);
        }
        if (gb) b.scatter_cell_gradient(P, i, j, k, *gb);
      }
  for (int n = 0; n < a.nodes(); ++n) La += lv.la[n].dot(s.psi_a[n]);
  for (int n = 0; n < b.nodes(); ++n) Lb += lv.lb[n].dot(s.psi_b[n]);
  if (ga)
    for (int n = 0; n < a.nodes(); ++n) (*ga)[n] -= sa * lv.la[n];
  if (gb)
    for (int n = 0; n < b.nodes(); ++n) (*gb)[n] -= sb * lv.lb[n];
  const double total = sa * (Fa - La) + sb * (Fb - Lb) - div;
  if (parts) *parts = EpsEnergy{total, Fa, Fb, La, Lb, div, sa, sb};
  return total;
}

// Reparametrization of the free eps-unknowns:
//   tube node (i,j,k), 0<k<nz:  C_k + r Phi(i,j,k)
//   plate column (i,j) inside:  U(i,j) - h dz sum_{m>=k} D_m(i,j)
// Tube bottom = junction, tube top and plate lateral columns = boundary data.
// Every block is multiplied by the square root of its energy weight.
class DofMap {
public:
  DofMap(const MultiStructureMesh& m, const EpsState& base, double h, double sa, double sb)
      : m_(m), base_(base), h_(h) {
    // rough diagonal stiffness of each block for W'' ~ 1
    const Vec3 da = m.a.spacing(), db = m.b.spacing();
    const double area_a = (m.a.nx * da(0)) * (m.a.ny * da(1));
    wC_ = std::sqrt(sa * 2.0 * area_a / da(2));
    wP_ = std::sqrt(sa * 4.0 * da(2));
    wU_ = std::sqrt(sb * 2.0);
    wD_ = std::sqrt(sb * db(0) * db(1) * db(2) / 4.0);
    const HexGrid& b = m.b;
    for (int j = 1; j < b.ny; ++j)
      for (int i = 1; i < b.nx; ++i) cols_.push_back({i, j});
    layer_ = (m.a.nx + 1) * (m.a.ny + 1);
    tube_size_ = (m.a.nz - 1) * 3 * (1 + layer_);
    size_ = tube_size_ + static_cast<int>(cols_.size()) * 3 * (1 + b.nz);
  }

  int size() const { return size_; }
  int tube_size() const { return tube_size_; }

  std::vector<double> from_state(const EpsState& s) const {
    std::vector<double> x(size_);
    const HexGrid& a = m_.a;
    int o = 0;
    for (int k = 1; k < a.nz; ++k) {
      Vec3 c = Vec3::Zero();
      for (int n = 0; n < layer_; ++n) c += s.psi_a[k * layer_ + n];
      c /= layer_;
      put(x, o, wC_ * c);
      for (int n = 0; n < layer_; ++n) put(x, o, wP_ * (s.psi_a[k * layer_ + n] - c) / m_.r);
    }
    const HexGrid& b = m_.b;
    const double dz = b.spacing()(2);
    for (auto [i, j] : cols_) {
      put(x, o, wU_ * s.psi_b[b.node(i, j, b.nz)]);
      for (int k = 0; k < b.nz; ++k)
        put(x, o, wD_ * (s.psi_b[b.node(i, j, k + 1)] - s.psi_b[b.node(i, j, k)]) / (h_ * dz));
    }
    return x;
  }

  void to_state(const double* x, EpsState& s) const {
    s = base_;
    const HexGrid& a = m_.a;
    int o = 0;
    for (int k = 1; k < a.nz; ++k) {
      const Vec3 c = get(x, o) / wC_;
      for (int n = 0; n < layer_; ++n) s.psi_a[k * layer_ + n] = c + m_.r * get(x, o) / wP_;
    }
    const HexGrid& b = m_.b;
    const double dz = b.spacing()(2);
    for (auto [i, j] : cols_) {
      const Vec3 U = get(x, o) / wU_;
      std::vector<Vec3> D(b.nz);
      for (int k = 0; k < b.nz; ++k) D[k] = get(x, o) / wD_;
      Vec3 v = U;
      s.psi_b[b.node(i, j, b.nz)] = v;
      for (int k = b.nz - 1; k >= 0; --k) {
        v -= h_ * dz * D[k];
        s.psi_b[b.node(i, j, k)] = v;
      }
    }
    apply_junction(s.psi_a, s.psi_b, m_);
  }

  // ga must already have its junction part moved onto gb.
  void pull_back(const Field& ga, const Field& gb, double* g) const {
    const HexGrid& a = m_.a;
    int o = 0;
    for (int k = 1; k < a.nz; ++k) {
      Vec3 c = Vec3::Zero();
      for (int n = 0; n < layer_; ++n) c += ga[k * layer_ + n];
      set(g, o, c / wC_);
      for (int n = 0; n < layer_; ++n) set(g, o, m_.r * ga[k * layer_ + n] / wP_);
    }
    const HexGrid& b = m_.b;
    const double dz = b.spacing()(2);
    for (auto [i, j] : cols_) {
      std::vector<Vec3> S(b.nz + 1);
      Vec3 acc = Vec3::Zero();
      for (int k = 0; k <= b.nz; ++k) {
        acc += gb[b.node(i, j, k)];
        S[k] = acc;
      }
      set(g, o, S[b.nz] / wU_);
      for (int k = 0; k < b.nz; ++k) set(g, o, -h_ * dz * S[k] / wD_);
    }
  }

  // variable scale per unknown, for perturbations of a given physical size
  std::vector<double> weights() const {
    std::vector<double> w;
    w.reserve(size_);
    for (int k = 1; k < m_.a.nz; ++k) {
      w.insert(w.end(), 3, wC_);
      w.insert(w.end(), 3 * layer_, wP_);
    }
    for (std::size_t c = 0; c < cols_.size(); ++c) {
      w.insert(w.end(), 3, wU_);
      w.insert(w.end(), 3 * m_.b.nz, wD_);
    }
    return w;
  }

private:
  static void put(std::vector<double>& x, int& o, const Vec3& v) {
    x[o] = v(0);
    x[o + 1] = v(1);
    x[o + 2] = v(2);
    o += 3;
  }
  static Vec3 get(const double* x, int& o) {
    const Vec3 v(x[o], x[o + 1], x[o + 2]);
    o += 3;
    return v;
  }
  static void set(double* g, int& o, const Vec3& v) {
    g[o] = v(0);
    g[o + 1] = v(1);
    g[o + 2] = v(2);
    o += 3;
  }

  const MultiStructureMesh& m_;
  EpsState base_;
  double h_, wC_ = 1, wP_ = 1, wU_ = 1, wD_ = 1;
  std::vector<std::pair<int, int>> cols_;
  int layer_ = 0, tube_size_ = 0, size_ = 0;
};

}  // namespace

EpsState identity_state(const MultiStructureMesh& m, double h) {
  const double r = m.r;
  EpsState s;
  s.psi_a = m.a.map_nodes([r](const Vec3& x) { return Vec3(r * x(0), r * x(1), x(2)); });
  s.psi_b = m.b.map_nodes([h](const Vec3& x) { return Vec3(x(0), x(1), h * x(2)); });
  return s;
}

EpsEnergy eps_energy(const EpsState& s, const EnergyDensity& W, const EpsForces& ef, const MultiStructureMesh& m) {
  if (static_cast<int>(s.psi_a.size()) != m.a.nodes() || static_cast<int>(s.psi_b.size()) != m.b.nodes())
    throw std::invalid_argument("eps_energy: state does not match the mesh");
  EpsEnergy e;
  eps_core(s, W, ef, m, assemble_loads(ef, m), nullptr, nullptr, &e, true);
  return e;
}

EpsSolution solve_eps(const EnergyDensity& W, const ForceSystem& fs, const MultiStructureMesh& m, Regime regime,
                      double h, const SolveOptions& opts) {
  opts.validate();
  fs.validate();
  if (!(h > 0.0)) throw ConfigError("solve_eps: h must be positive");
  const EpsForces ef = scale_forces(fs, regime, m.r, h);
  const LoadVectors lv = assemble_loads(ef, m);
  const auto [sa, sb] = energy_weights(regime, m.r, h);
  const EpsState base = identity_state(m, h);
  const DofMap map(m, base, h, sa, sb);

  Objective f = [&](const double* x, double* g) {
    EpsState s;
    map.to_state(x, s);
    if (!g) return eps_core(s, W, ef, m, lv, nullptr, nullptr, nullptr, false);
    Field ga(m.a.nodes(), Vec3::Zero()), gb(m.b.nodes(), Vec3::Zero());
    const double e = eps_core(s, W, ef, m, lv, &ga, &gb, nullptr, false);
    junction_adjoint(ga, gb, m);
    map.pull_back(ga, gb, g);
    return e;
  };

  const std::vector<double> x0 = map.from_state(base);
  std::vector<double> best = x0;
  LbfgsResult best_res;
  int starts = 1;
  if (W.is_convex() || opts.restarts == 0) {
    best_res = lbfgs_minimize(f, best, opts.lbfgs);
  } else {
    // every start gets a short run; the best one continues with the remaining budget
    LbfgsOptions screen = opts.lbfgs;
    screen.max_iterations = std::min(opts.screen_iterations, opts.lbfgs.max_iterations);
    best_res = lbfgs_minimize(f, best, screen);
    std::mt19937_64 rng(opts.seed);
    std::normal_distribution<double> nd(0.0, opts.restart_amplitude);
    const std::vector<double> w = map.weights();
    for (int t = 0; t < opts.restarts; ++t) {
      std::vector<double> x = x0;
      for (int i = 0; i < map.size(); ++i) x[i] += nd(rng) * w[i];
      const LbfgsResult res = lbfgs_minimize(f, x, screen);
      ++starts;
      if (res.value < best_res.value) {
        best = x;
        best_res = res;
      }
    }
    const int left = opts.lbfgs.max_iterations - best_res.iterations;
    if (!best_res.converged && left > 0) {
      LbfgsOptions rest = opts.lbfgs;
      rest.max_iterations = left;
      const int used = best_res.iterations;
      const double start = best_res.initial_value;
      best_res = lbfgs_minimize(f, best, rest);
      best_res.iterations += used;
      best_res.initial_value = start;
    }
  }
  EpsSolution sol;
  map.to_state(best.data(), sol.state);
  sol.energy = eps_energy(sol.state, W, ef, m);
  sol.descent = best_res;
  sol.slack = best_res.last_decrease;
  sol.converged = best_res.converged;
  sol.starts = starts;
  return sol;
}

EpsSolution solve_eps(const EnergyDensity& W, const ForceSystem& fs, const Geometry& g, const Resolution& res,
                      const RegimeConfig& cfg, int eps_index, const SolveOptions& opts) {
  validate(cfg);
  if (eps_index < 0 || eps_index >= static_cast<int>(cfg.eps.size())) throw ConfigError("eps index out of range");
  const EpsLevel e = cfg.eps[eps_index];
  const MultiStructureMesh m = build_multistructure(g, res, e.r);
  return solve_eps(W, fs, m, cfg.regime, e.h, opts);
}

// ---------------------------------------------------------------- limit problems

LimitSetup default_limit_setup(const RegimeConfig& cfg, const Geometry& g, const Resolution& res) {
  LimitSetup s;
  s.regime = cfg.regime;
  s.ell = cfg.ell;
  s.p = cfg.p;
  s.geom = g;
  s.meshes = {IntervalMesh{g.L, res.interval}, graded_triangulation(g.sb, res.tri_squares)};
  return s;
}

LimitSetup matched_limit_setup(const RegimeConfig& cfg, const Geometry& g, const Resolution& res) {
  LimitSetup s = default_limit_setup(cfg, g, res);
  s.meshes = {IntervalMesh{g.L, res.nz}, quad_membrane(g.sb, res.nb)};
  s.q = LoadQuadrature{res.na, res.nh};
  return s;
}

LimitState natural_limit_state(const LimitSetup& s) {
  LimitState st = frozen_beam(s.meshes.interval, s.geom);
  const LimitState pl = frozen_plate(s.meshes.membrane);
  st.psi_b = pl.psi_b;
  st.bbar_b = pl.bbar_b;
  return st;
}

namespace {

bool has_string(Regime r) { return r != Regime::LZero; }
bool has_membrane(Regime r) { return r != Regime::LInf; }
double membrane_coef(const LimitSetup& s) { return s.regime == Regime::LPlus ? s.ell : 1.0; }

Mat3 string_arg(const LimitState& st, int e, double abar, double dz) {
  return join(st.bbar_a[e] / abar, (st.psi_a[e + 1] - st.psi_a[e]) / dz);
}

Mat3 membrane_arg(const LimitState& st, const PlanarMesh& pm, int e) {
  return join(pm.gradient(st.psi_b, e), st.bbar_b[e]);
}

class Stopwatch {
public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
  }

private:
  std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

}  // namespace

LimitEnergy limit_energy(const LimitState& st, const EnergyDensity& W, const ForceSystem& fs, const LimitSetup& setup,
                         EnvelopeCache& cache, const SolveOptions& opts) {
  LimitEnergy out;
  const Stopwatch clock;
  auto over_budget = [&] { return clock.seconds() > opts.envelope_budget; };
  const double abar = setup.geom.abar();
  if (has_string(setup.regime)) {
    const IntervalMesh& im = setup.meshes.interval;
    for (int e = 0; e < im.n; ++e) {
      const Mat3 M = string_arg(st, e, abar, im.h());
      double v;
      if (W.is_convex() || !over_budget()) {
        v = cache.convex(W, M, opts.envelope);
      } else {
        v = evaluate(W, M);
        out.budget_limited = true;
      }
      out.string += abar * im.h() * v;
    }
  }
  if (has_membrane(setup.regime)) {
    const PlanarMesh& pm = setup.meshes.membrane;
    for (std::size_t e = 0; e < pm.elements.size(); ++e) {
      const Mat3 M = membrane_arg(st, pm, static_cast<int>(e));
      double v;
      if (W.is_convex() || !over_budget()) {
        v = cache.cross_quasiconvex(W, M, opts.envelope);
      } else {
        v = evaluate(W, M);
        out.budget_limited = true;
      }
      out.membrane += pm.area[e] * v;
    }
  }
  out.load = limit_load(setup.regime, setup.ell, st, fs, setup.geom, setup.meshes, setup.q);
  out.total = out.string + membrane_coef(setup) * out.membrane - out.load;
  return out;
}

LimitEnergy limit_energy_lplus(const LimitState& st, const EnergyDensity& W, const ForceSystem& fs,
                               const Geometry& g, double ell, const LimitMeshes& lm, EnvelopeCache& cache,
                               const SolveOptions& opts) {
  LimitSetup s;
  s.regime = Regime::LPlus;
  s.ell = ell;
  s.geom = g;
  s.meshes = lm;
  return limit_energy(st, W, fs, s, cache, opts);
}

namespace {

// Convex combination sum_i lambda_i W(M + Delta_i - sum_j lambda_j Delta_j), lambda = softmax(logits).
// Its infimum over the parameters is the convex envelope at M (for enough atoms).
struct Lift {
  std::vector<Mat3> shift;
  std::vector<double> logit;
  int size() const { return static_cast<int>(shift.size()); }
  int params() const { return 10 * size(); }
};

std::vector<double> softmax(const std::vector<double>& t) {
  const double mx = *std::max_element(t.begin(), t.end());
  std::vector<double> l(t.size());
  double s = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) s += (l[i] = std::exp(t[i] - mx));
  for (double& v : l) v /= s;
  return l;
}

// value at M; G = d/dM; gp (10 N entries: shifts then logits) when non-null
double lift_value(const EnergyDensity& W, const Mat3& M, const Lift& L, Mat3* G, double* gp) {
  const int n = L.size();
  if (n == 1) {
    const Mat3 A = M + L.shift[0] - L.shift[0];
    if (G) *G = gradient(W, A);
    if (gp) std::fill(gp, gp + 10, 0.0);
    return evaluate(W, A);
  }
  const std::vector<double> lam = softmax(L.logit);
  Mat3 bar = Mat3::Zero();
  for (int i = 0; i < n; ++i) bar += lam[i] * L.shift[i];
  std::vector<double> w(n);
  std::vector<Mat3> g(n);
  double value = 0.0;
  Mat3 Gs = Mat3::Zero();
  for (int i = 0; i < n; ++i) {
    const Mat3 A = M + L.shift[i] - bar;
    w[i] = evaluate(W, A);
    value += lam[i] * w[i];
    if (G || gp) {
      g[i] = gradient(W, A);
      Gs += lam[i] * g[i];
    }
  }
  if (G) *G = Gs;
  if (gp) {
    for (int j = 0; j < n; ++j) {
      const Mat3 d = lam[j] * (g[j] - Gs);
      for (int q = 0; q < 9; ++q) gp[9 * j + q] = d(q % 3, q / 3);
      gp[9 * n + j] = lam[j] * (w[j] - value) - lam[j] * frob(Gs, L.shift[j] - bar);
    }
  }
  return value;
}

void lift_read(Lift& L, const double* x) {
  const int n = L.size();
  for (int j = 0; j < n; ++j) {
    for (int q = 0; q < 9; ++q) L.shift[j](q % 3, q / 3) = x[9 * j + q];
    L.logit[j] = x[9 * n + j];
  }
}

void lift_write(const Lift& L, double* x) {
  const int n = L.size();
  for (int j = 0; j < n; ++j) {
    for (int q = 0; q < 9; ++q) x[9 * j + q] = L.shift[j](q % 3, q / 3);
    x[9 * n + j] = L.logit[j];
  }
}

// Start from the envelope estimator's lamination at M, trimmed to n atoms.
Lift initial_lift(const EnergyDensity& W, const Mat3& M, int n, const EnvelopeOptions& o) {
  Lift L;
  L.shift.assign(n, Mat3::Zero());
  L.logit.assign(n, -10.0);
  L.logit[0] = 0.0;
  if (n == 1 || W.is_convex()) return L;
  const EnvelopeResult er = convex_envelope(W, M, o);
  std::vector<int> idx(er.atoms.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  std::sort(idx.begin(), idx.end(), [&](int a, int b) { return er.weights[a] > er.weights[b]; });
  for (int i = 0; i < n && i < static_cast<int>(idx.size()); ++i) {
    L.shift[i] = er.atoms[idx[i]] - M;
    L.logit[i] = std::log(std::max(er.weights[idx[i]], 1e-12));
  }
  return L;
}

// Flattened limit state <-> affine load functional.
struct LoadGradient {
  double constant = 0.0;
  Field psi_a;
  std::vector<Mat3x2> bbar_a;
  Field psi_b;
  std::vector<Vec3> bbar_b;
};

LoadGradient probe_load(const ForceSystem& fs, const LimitSetup& setup) {
  LimitState z = natural_limit_state(setup);
  for (auto& v : z.psi_a) v.setZero();
  for (auto& v : z.bbar_a) v.setZero();
  for (auto& v : z.psi_b) v.setZero();
  for (auto& v : z.bbar_b) v.setZero();
  auto L = [&](const LimitState& s) { return limit_load(setup.regime, setup.ell, s, fs, setup.geom, setup.meshes, setup.q); };
  LoadGradient g;
  g.constant = L(z);
  g.psi_a = z.psi_a;
  g.bbar_a = z.bbar_a;
  g.psi_b = z.psi_b;
  g.bbar_b = z.bbar_b;
  const bool sa = has_string(setup.regime), sb = has_membrane(setup.regime);
  if (sa) {
    for (std::size_t n = 0; n < z.psi_a.size(); ++n)
      for (int c = 0; c < 3; ++c) {
        z.psi_a[n](c) = 1.0;
        g.psi_a[n](c) = L(z) - g.constant;
        z.psi_a[n](c) = 0.0;
      }
    for (std::size_t e = 0; e < z.bbar_a.size(); ++e)
      for (int c = 0; c < 6; ++c) {
        z.bbar_a[e](c % 3, c / 3) = 1.0;
        g.bbar_a[e](c % 3, c / 3) = L(z) - g.constant;
        z.bbar_a[e](c % 3, c / 3) = 0.0;
      }
  }
  if (sb) {
    for (std::size_t n = 0; n < z.psi_b.size(); ++n)
      for (int c = 0; c < 3; ++c) {
        z.psi_b[n](c) = 1.0;
        g.psi_b[n](c) = L(z) - g.constant;
        z.psi_b[n](c) = 0.0;
      }
    for (std::size_t e = 0; e < z.bbar_b.size(); ++e)
      for (int c = 0; c < 3; ++c) {
        z.bbar_b[e](c) = 1.0;
        g.bbar_b[e](c) = L(z) - g.constant;
        z.bbar_b[e](c) = 0.0;
      }
  }
  return g;
}

double load_value(const LoadGradient& g, const LimitState& s, bool sa, bool sb) {
  double w = g.constant;
  if (sa) {
    for (std::size_t n = 0; n < s.psi_a.size(); ++n) w += g.psi_a[n].dot(s.psi_a[n]);
    for (std::size_t e = 0; e < s.bbar_a.size(); ++e) w += frob(join(g.bbar_a[e], Vec3::Zero()), join(s.bbar_a[e], Vec3::Zero()));
  }
  if (sb) {
    for (std::size_t n = 0; n < s.psi_b.size(); ++n) w += g.psi_b[n].dot(s.psi_b[n]);
    for (std::size_t e = 0; e < s.bbar_b.size(); ++e) w += g.bbar_b[e].dot(s.bbar_b[e]);
  }
  return w;
}

// Descent form of the limit energy: lifted convex combinations on the string, W on the membrane.
struct LimitDescent {
  const EnergyDensity& W;
  const LimitSetup& setup;
  const LoadGradient& lg;
  std::vector<Lift> lifts;
  bool sa, sb;
  int junction;  // 0 free, 1 tied to membrane origin, 2 pinned at 0
  double abar, dz, coef;

  double string_elastic(const LimitState& st, int e, Mat3* G, double* gp) const {
    return abar * dz * lift_value(W, string_arg(st, e, abar, dz), lifts[e], G, gp);
  }
  double membrane_elastic(const LimitState& st, int e, Mat3* G) const {
    const Mat3 M = membrane_arg(st, setup.meshes.membrane, e);
    const double a = coef * setup.meshes.membrane.area[e];
    if (G) *G = a * gradient(W, M);
    return a * evaluate(W, M);
  }
  double total(const LimitState& st) const {
    double E = 0.0;
    if (sa)
      for (int e = 0; e < setup.meshes.interval.n; ++e) E += string_elastic(st, e, nullptr, nullptr);
    if (sb)
      for (std::size_t e = 0; e < setup.meshes.membrane.elements.size(); ++e)
        E += membrane_elastic(st, static_cast<int>(e), nullptr);
    return E - load_value(lg, st, sa, sb);
  }
};

void enforce_junction(LimitState& st, const LimitDescent& d) {
  if (!d.sa) return;
  if (d.junction == 1) st.psi_a[0] = st.psi_b[d.setup.meshes.membrane.origin];
  if (d.junction == 2) st.psi_a[0].setZero();
}

// Quasi-Newton over nodal fields with moments and lifts fixed.
double psi_step(LimitState& st, const LimitDescent& d, const LbfgsOptions& lo) {
  const IntervalMesh& im = d.setup.meshes.interval;
  const PlanarMesh& pm = d.setup.meshes.membrane;
  std::vector<int> a_nodes, b_nodes;
  if (d.sa) {
    if (d.junction == 0) a_nodes.push_back(0);
    for (int k = 1; k < im.n; ++k) a_nodes.push_back(k);
  }
  if (d.sb)
    for (std::size_t n = 0; n < pm.nodes.size(); ++n)
      if (!pm.boundary[n]) b_nodes.push_back(static_cast<int>(n));
  const int na = static_cast<int>(a_nodes.size());
  std::vector<double> x(3 * (na + b_nodes.size()));
  for (int q = 0; q < na; ++q)
    for (int c = 0; c < 3; ++c) x[3 * q + c] = st.psi_a[a_nodes[q]](c);
  for (std::size_t q = 0; q < b_nodes.size(); ++q)
    for (int c = 0; c < 3; ++c) x[3 * (na + q) + c] = st.psi_b[b_nodes[q]](c);
  LimitState work = st;
  auto unpack = [&](const double* v) {
    for (int q = 0; q < na; ++q) work.psi_a[a_nodes[q]] = Vec3(v[3 * q], v[3 * q + 1], v[3 * q + 2]);
    for (std::size_t q = 0; q < b_nodes.size(); ++q)
      work.psi_b[b_nodes[q]] = Vec3(v[3 * (na + q)], v[3 * (na + q) + 1], v[3 * (na + q) + 2]);
    enforce_junction(work, d);
  };
  Objective f = [&](const double* v, double* g) {
    unpack(v);
    const double E = d.total(work);
    if (!g) return E;
    Field ga(work.psi_a.size(), Vec3::Zero()), gb(work.psi_b.size(), Vec3::Zero());
    if (d.sa) {
      for (int e = 0; e < im.n; ++e) {
        Mat3 G;
        d.string_elastic(work, e, &G, nullptr);
        ga[e + 1] += d.abar * G.col(2);
        ga[e] -= d.abar * G.col(2);
      }
      for (std::size_t n = 0; n < ga.size(); ++n) ga[n] -= d.lg.psi_a[n];
      if (d.junction == 1) gb[pm.origin] += ga[0];
    }
    if (d.sb) {
      for (std::size_t e = 0; e < pm.elements.size(); ++e) {
        Mat3 G;
        d.membrane_elastic(work, static_cast<int>(e), &G);
        pm.scatter_gradient(in_plane(G), static_cast<int>(e), gb);
      }
      for (std::size_t n = 0; n < gb.size(); ++n) gb[n] -= d.lg.psi_b[n];
    }
    for (int q = 0; q < na; ++q)
      for (int c = 0; c < 3; ++c) g[3 * q + c] = ga[a_nodes[q]](c);
    for (std::size_t q = 0; q < b_nodes.size(); ++q)
      for (int c = 0; c < 3; ++c) g[3 * (na + q) + c] = gb[b_nodes[q]](c);
    return E;
  };
  if (!x.empty()) lbfgs_minimize(f, x, lo);
  unpack(x.data());
  st = work;
  return d.total(st);
}

// Pointwise minimization over the moments (and lifts) of every element.
double moment_step(LimitState& st, LimitDescent& d, const LbfgsOptions& lo) {
  if (d.sa) {
    const IntervalMesh& im = d.setup.meshes.interval;
    for (int e = 0; e < im.n; ++e) {
      Lift& L = d.lifts[e];
      const int np = L.size() > 1 ? L.params() : 0;
      std::vector<double> x(6 + np);
      for (int c = 0; c < 6; ++c) x[c] = st.bbar_a[e](c % 3, c / 3);
      if (np) lift_write(L, x.data() + 6);
      const Vec3 zeta = (st.psi_a[e + 1] - st.psi_a[e]) / d.dz;
      const Mat3x2 lb = d.lg.bbar_a[e];
      Lift trial = L;
      Objective f = [&](const double* v, double* g) {
        Mat3x2 b;
        for (int c = 0; c < 6; ++c) b(c % 3, c / 3) = v[c];
        if (np) lift_read(trial, v + 6);
        const Mat3 M = join(b / d.abar, zeta);
        Mat3 G;
        const double val = d.abar * d.dz * lift_value(d.W, M, trial, g ? &G : nullptr, g && np ? g + 6 : nullptr);
        if (g) {
          for (int c = 0; c < 6; ++c) g[c] = d.dz * G(c % 3, c / 3) - lb(c % 3, c / 3);
          for (int c = 0; c < np; ++c) g[6 + c] *= d.abar * d.dz;
        }
        return val - frob(join(lb, Vec3::Zero()), join(b, Vec3::Zero()));
      };
      lbfgs_minimize(f, x, lo);
      for (int c = 0; c < 6; ++c) st.bbar_a[e](c % 3, c / 3) = x[c];
      if (np) lift_read(L, x.data() + 6);
    }
  }
  if (d.sb) {
    const PlanarMesh& pm = d.setup.meshes.membrane;
    for (std::size_t e = 0; e < pm.elements.size(); ++e) {
      const Mat3x2 Fa = pm.gradient(st.psi_b, static_cast<int>(e));
      const Vec3 lb = d.lg.bbar_b[e];
      const double a = d.coef * pm.area[e];
      std::vector<double> x = {st.bbar_b[e](0), st.bbar_b[e](1), st.bbar_b[e](2)};
      Objective f = [&](const double* v, double* g) {
        const Vec3 b(v[0], v[1], v[2]);
        const Mat3 M = join(Fa, b);
        if (g) {
          const Vec3 G = a * normal_col(gradient(d.W, M)) - lb;
          g[0] = G(0);
          g[1] = G(1);
          g[2] = G(2);
        }
        return a * evaluate(d.W, M) - lb.dot(b);
      };
      lbfgs_minimize(f, x, lo);
      st.bbar_b[e] = Vec3(x[0], x[1], x[2]);
    }
  }
  return d.total(st);
}

}  // namespace

LimitSolution solve_limit(const EnergyDensity& W, const ForceSystem& fs, const LimitSetup& setup,
                          const SolveOptions& opts) {
  opts.validate();
  fs.validate();
  if (setup.regime == Regime::LInf && !(setup.p > 2.0))
    throw ConfigError("linf limit requires p > 2 (\"Assume that p>2\")");
  if (setup.regime == Regime::LZero && !(setup.p <= 2.0))
    throw ConfigError("lzero limit requires p <= 2 (\"Assume that p≤2\")");
  const LoadGradient lg = probe_load(fs, setup);
  LimitDescent d{W, setup, lg, {}, has_string(setup.regime), has_membrane(setup.regime), 0,
                 setup.geom.abar(), setup.meshes.interval.h(), membrane_coef(setup)};
  if (d.sa && setup.p > 2.0) d.junction = setup.regime == Regime::LPlus ? 1 : 2;
  if (d.junction == 1 && setup.meshes.membrane.origin < 0)
    throw ConfigError("membrane mesh has no node at the junction point");

  LimitSolution sol;
  LimitState st = natural_limit_state(setup);
  if (d.sa) {
    const int n = W.is_convex() ? 1 : opts.lift_points;
    for (int e = 0; e < setup.meshes.interval.n; ++e)
      d.lifts.push_back(initial_lift(W, string_arg(st, e, d.abar, d.dz), n, opts.envelope));
  }
  enforce_junction(st, d);
  double E = d.total(st);
  sol.history.push_back(E);
  LbfgsOptions inner = opts.lbfgs;
  inner.max_iterations = std::min(inner.max_iterations, 500);
  for (int sweep = 1; sweep <= opts.max_outer; ++sweep) {
    const double before = E;
    E = moment_step(st, d, inner);
    sol.history.push_back(E);
    E = psi_step(st, d, opts.lbfgs);
    sol.history.push_back(E);
    sol.sweeps = sweep;
    if (before - E <= opts.tolerance * std::max(1.0, std::abs(E))) {
      sol.converged = true;
      break;
    }
  }
  sol.state = st;
  sol.descent_energy = E;

  // final value: lifted string values and W on the membrane, improved by the estimators where cheaper
  EnvelopeCache cache(opts.memo_quantum);
  const LimitEnergy env = limit_energy(st, W, fs, setup, cache, opts);
  double elastic = 0.0;
  if (d.sa)
    for (int e = 0; e < setup.meshes.interval.n; ++e) {
      const double lifted = d.string_elastic(st, e, nullptr, nullptr);
      const double est = W.is_convex() ? lifted : d.abar * d.dz * cache.convex(W, string_arg(st, e, d.abar, d.dz), opts.envelope);
      elastic += std::min(lifted, est);
    }
  if (d.sb) elastic += membrane_coef(setup) * env.membrane;
  sol.energy = elastic - env.load;
  sol.budget_limited = env.budget_limited;
  return sol;
}

// ---------------------------------------------------------------- strings

RadialHull::RadialHull(const EnergyDensity& W, double t_max, int samples) {
  if (samples < 3 || !(t_max > 0.0)) throw ConfigError("radial hull needs a positive range and 3+ samples");
  const int n = samples;
  const double dt = t_max / (n - 1);
  std::vector<double> t(n), w(n);
  for (int i = 0; i < n; ++i) {
    t[i] = i * dt;
    w[i] = reduced_W0(W, Vec3(0, 0, t[i]), 4).value;
  }
  // lower hull of the even extension: the mirrored points only matter through the origin,
  // so hull the half line with a virtual point at -t_1
  std::vector<double> px, py;
  for (int i = n - 1; i >= 1; --i) {
    px.push_back(-t[i]);
    py.push_back(w[i]);
  }
  for (int i = 0; i < n; ++i) {
    px.push_back(t[i]);
    py.push_back(w[i]);
  }
  std::vector<int> hull;
  for (int i = 0; i < static_cast<int>(px.size()); ++i) {
    while (hull.size() >= 2) {
      const int a = hull[hull.size() - 2], b = hull.back();
      const double cross = (px[b] - px[a]) * (py[i] - py[a]) - (py[b] - py[a]) * (px[i] - px[a]);
      if (cross <= 0.0)
        hull.pop_back();
      else
        break;
    }
    hull.push_back(i);
  }
  std::vector<double> hv(n);
  std::size_t seg = 0;
  for (int i = 0; i < n; ++i) {
    while (seg + 1 < hull.size() && px[hull[seg + 1]] < t[i]) ++seg;
    const int a = hull[seg], b = hull[std::min(seg + 1, hull.size() - 1)];
    hv[i] = a == b ? py[a] : py[a] + (py[b] - py[a]) * (t[i] - px[a]) / (px[b] - px[a]);
  }
  // C1 version: slopes linear between cell midpoints, zero at the origin
  std::vector<double> mid(n - 1);
  for (int i = 0; i + 1 < n; ++i) mid[i] = (hv[i + 1] - hv[i]) / dt;
  t_ = t;
  s_.assign(n, 0.0);
  for (int i = 1; i + 1 < n; ++i) s_[i] = 0.5 * (mid[i - 1] + mid[i]);
  s_[n - 1] = mid[n - 2];
  v_.assign(n, hv[0]);
  for (int i = 0; i + 1 < n; ++i) v_[i + 1] = v_[i] + dt * (s_[i] + 2.0 * mid[i] + s_[i + 1]) / 4.0;
  mids_ = mid;
}

double RadialHull::value(double t) const {
  const double dt = t_[1] - t_[0];
  if (t >= t_.back()) return v_.back() + s_.back() * (t - t_.back());
  const int i = std::min(static_cast<int>(t / dt), static_cast<int>(t_.size()) - 2);
  const double u = t - t_[i], half = 0.5 * dt;
  if (u <= half) return v_[i] + u * s_[i] + 0.5 * u * u * (mids_[i] - s_[i]) / half;
  const double v_half = v_[i] + half * (s_[i] + mids_[i]) / 2.0;
  const double w = u - half;
  return v_half + w * mids_[i] + 0.5 * w * w * (s_[i + 1] - mids_[i]) / half;
}

double RadialHull::slope(double t) const {
  const double dt = t_[1] - t_[0];
  if (t >= t_.back()) return s_.back();
  const int i = std::min(static_cast<int>(t / dt), static_cast<int>(t_.size()) - 2);
  const double u = t - t_[i], half = 0.5 * dt;
  if (u <= half) return s_[i] + u * (mids_[i] - s_[i]) / half;
  return mids_[i] + (u - half) * (s_[i + 1] - mids_[i]) / half;
}

namespace {

bool frame_indifferent(const EnergyDensity& W) {
  return W.kind == DensityKind::RadialQuartic || W.kind == DensityKind::PWellDist;
}

}  // namespace

StringSolution solve_string(const EnergyDensity& W, const ForceSystem& fs, const Geometry& g, const IntervalMesh& im,
                            const SolveOptions& opts, bool with_bending, const LoadQuadrature& q) {
  opts.validate();
  fs.validate();
  if (!with_bending && !fs.calGa.is_zero())
    throw ConfigError("the no-bending string needs calG^a = 0 (the moment term is what induces bending)");
  if (!with_bending && !W.is_convex() && !frame_indifferent(W))
    throw ConfigError("no-bending string: custom nonconvex densities have no radial convexification");
  const ReducedLoads rl = reduced_loads(fs, g, q);
  const int n = im.n;
  const double dz = im.h(), abar = g.abar(), L = g.L;
  std::vector<Vec3> Fe(n);
  std::vector<Mat3x2> Ge(n);
  for (int e = 0; e < n; ++e) {
    const double x = im.center(e);
    Fe[e] = rl.fbar_a(x) + rl.gbar_a(x);
    Ge[e] = in_plane(fs.calGa.at_x3(x));
  }
  StringSolution sol;
  sol.psi.resize(n + 1);
  for (int k = 0; k <= n; ++k) sol.psi[k] = Vec3(0, 0, im.node(k));
  sol.bbar.assign(n, abar * identity_alpha());
  (void)L;

  auto read_psi = [&](const double* x, Field& psi) {
    psi.front() = Vec3::Zero();
    psi.back() = Vec3(0, 0, im.node(n));
    for (int k = 1; k < n; ++k) psi[k] = Vec3(x[3 * (k - 1)], x[3 * (k - 1) + 1], x[3 * (k - 1) + 2]);
  };
  const int npsi = 3 * (n - 1);
  auto load_part = [&](const Field& psi, double* gx) {
    double w = 0.0;
    for (int e = 0; e < n; ++e) {
      w += dz * Fe[e].dot(0.5 * (psi[e] + psi[e + 1]));
      if (gx) {
        for (int side = 0; side < 2; ++side) {
          const int k = e + side;
          if (k >= 1 && k < n)
            for (int c = 0; c < 3; ++c) gx[3 * (k - 1) + c] -= 0.5 * dz * Fe[e](c);
        }
      }
    }
    return w;
  };
  auto add_psi_grad = [&](int e, const Vec3& G3, double* gx) {
    if (e + 1 < n)
      for (int c = 0; c < 3; ++c) gx[3 * e + c] += G3(c);
    if (e >= 1)
      for (int c = 0; c < 3; ++c) gx[3 * (e - 1) + c] -= G3(c);
  };

  std::vector<double> x(npsi);
  for (int k = 1; k < n; ++k)
    for (int c = 0; c < 3; ++c) x[3 * (k - 1) + c] = sol.psi[k](c);

  if (with_bending) {
    const int nl = W.is_convex() ? 1 : opts.lift_points;
    const Lift L0 = initial_lift(W, join(identity_alpha(), Vec3::UnitZ()), nl, opts.envelope);
    const int np = nl > 1 ? L0.params() : 0;
    const int per = 6 + np;
    x.resize(npsi + n * per);
    for (int e = 0; e < n; ++e) {
      double* v = x.data() + npsi + e * per;
      for (int c = 0; c < 6; ++c) v[c] = sol.bbar[e](c % 3, c / 3);
      if (np) lift_write(L0, v + 6);
    }
    std::vector<Lift> lifts(n, L0);
    Field psi(n + 1);
    Objective f = [&](const double* v, double* gx) {
      read_psi(v, psi);
      if (gx) std::fill(gx, gx + npsi + n * per, 0.0);
      double E = -load_part(psi, gx);
      for (int e = 0; e < n; ++e) {
        const double* ve = v + npsi + e * per;
        Mat3x2 b;
        for (int c = 0; c < 6; ++c) b(c % 3, c / 3) = ve[c];
        if (np) lift_read(lifts[e], ve + 6);
        const Mat3 M = join(b / abar, (psi[e + 1] - psi[e]) / dz);
        Mat3 G;
        double* ge = gx ? gx + npsi + e * per : nullptr;
        E += abar * dz * lift_value(W, M, lifts[e], gx ? &G : nullptr, ge && np ? ge + 6 : nullptr);
        E -= dz * frob(join(Ge[e], Vec3::Zero()), join(b, Vec3::Zero()));
        if (gx) {
          for (int c = 0; c < 6; ++c) ge[c] = dz * G(c % 3, c / 3) - dz * Ge[e](c % 3, c / 3);
          for (int c = 0; c < np; ++c) ge[6 + c] *= abar * dz;
          add_psi_grad(e, abar * G.col(2), gx);
        }
      }
      return E;
    };
    const LbfgsResult res = lbfgs_minimize(f, x, opts.lbfgs);
    sol.energy = res.value;
    sol.converged = res.converged;
    read_psi(x.data(), sol.psi);
    for (int e = 0; e < n; ++e)
      for (int c = 0; c < 6; ++c) sol.bbar[e](c % 3, c / 3) = x[npsi + e * per + c];
    return sol;
  }

  // no bending: moments eliminated, density conv(inf_b W(b|.))
  std::optional<RadialHull> hull;
  if (!W.is_convex()) hull.emplace(W);
  auto w0 = [&](const Vec3& zeta, Vec3* grad) {
    if (hull) {
      const double t = zeta.norm();
      if (grad) *grad = t > 0.0 ? Vec3(hull->slope(t) * zeta / t) : Vec3::Zero();
      return hull->value(t);
    }
    const EnvelopeResult r = reduced_W0(W, zeta, 1);
    if (grad) *grad = normal_col(gradient(W, r.atoms.front()));
    return r.value;
  };
  Field psi(n + 1);
  Objective f = [&](const double* v, double* gx) {
    read_psi(v, psi);
    if (gx) std::fill(gx, gx + npsi, 0.0);
    double E = -load_part(psi, gx);
    for (int e = 0; e < n; ++e) {
      Vec3 G;
      E += abar * dz * w0((psi[e + 1] - psi[e]) / dz, gx ? &G : nullptr);
      if (gx) add_psi_grad(e, abar * G, gx);
    }
    return E;
  };
  const LbfgsResult res = lbfgs_minimize(f, x, opts.lbfgs);
  sol.energy = res.value;
  sol.converged = res.converged;
  read_psi(x.data(), sol.psi);
  for (int e = 0; e < n; ++e) {
    const Vec3 zeta = (sol.psi[e + 1] - sol.psi[e]) / dz;
    const EnvelopeResult r = reduced_W0(W, zeta, 4);
    sol.bbar[e] = abar * in_plane(r.atoms.front());
  }
  return sol;
}

// ---------------------------------------------------------------- diagnostics

namespace {

Mat3 rotation_exp(const Vec3& w) {
  const double t = w.norm();
  if (t < 1e-14) return Mat3::Identity();
  return Eigen::AngleAxisd(t, w / t).toRotationMatrix();
}

}  // namespace

RigidityReport rigidity_check(const Field& psi, const HexGrid& g, const WellSet& K, double scale, Side side,
                              double p) {
  if (static_cast<int>(psi.size()) != g.nodes()) throw std::invalid_argument("rigidity_check: field/mesh mismatch");
  if (!(scale > 0.0) || !(p > 1.0)) throw std::invalid_argument("rigidity_check: need scale > 0 and p > 1");
  std::vector<Mat3> D;
  for (int k = 0; k < g.nz; ++k)
    for (int j = 0; j < g.ny; ++j)
      for (int i = 0; i < g.nx; ++i) {
        const Mat3 G = g.cell_gradient(psi, i, j, k);
        D.push_back(side == Side::A ? scale_cols_a(G, scale) : scale_col_b(G, scale));
      }
  const double vol = g.cell_volume();
  RigidityReport rep;
  Mat3 mean = Mat3::Zero();
  for (const Mat3& d : D) {
    rep.rhs_distance += vol * dist_to_wells(d, K, p);
    mean += d;
  }
  mean /= static_cast<double>(D.size());
  auto lhs = [&](const Mat3& M) {
    double s = 0.0;
    for (const Mat3& d : D) s += vol * std::pow((d - M).norm(), p);
    return s;
  };
  rep.lhs = kInf;
  std::vector<double> wells = {1.0};
  if (K.double_well) wells.push_back(K.delta);
  const Mat3 R0 = project_rotation(mean);
  for (double s : wells) {
    Objective f = [&](const double* w, double* g) {
      const Vec3 om(w[0], w[1], w[2]);
      const double v = lhs(s * R0 * rotation_exp(om));
      if (g)
        for (int c = 0; c < 3; ++c) {
          Vec3 e = om;
          const double st = 1e-6;
          e(c) += st;
          const double vp = lhs(s * R0 * rotation_exp(e));
          e(c) -= 2 * st;
          g[c] = (vp - lhs(s * R0 * rotation_exp(e))) / (2 * st);
        }
      return v;
    };
    std::vector<double> w = {0, 0, 0};
    LbfgsOptions lo;
    lo.max_iterations = 200;
    const LbfgsResult r = lbfgs_minimize(f, w, lo);
    if (r.value < rep.lhs) {
      rep.lhs = r.value;
      rep.M_best = s * R0 * rotation_exp(Vec3(w[0], w[1], w[2]));
    }
  }
  if (rep.rhs_distance > 0.0)
    rep.ratio = rep.lhs / rep.rhs_distance;
  else
    rep.ratio = rep.lhs > 0.0 ? kInf : 0.0;
  return rep;
}

Field bent_well_state(const HexGrid& g, double r, double delta, double curvature) {
  const double k = curvature;
  return g.map_nodes([=](const Vec3& x) {
    const double t = x(2), c = std::cos(k * t), s = std::sin(k * t);
    Mat3 R;
    R << 1, 0, 0, 0, c, -s, 0, s, c;
    const Vec3 gamma = k == 0.0 ? Vec3(0, 0, t) : Vec3(0, (c - 1.0) / k, s / k);
    return Vec3(delta * (R * Vec3(r * x(0), r * x(1), 0.0) + gamma));
  });
}

DivergenceCheck divergence_consistency(const DivergenceLoads& H, Regime regime, const Geometry& g,
                                       const Resolution& res, const std::vector<EpsLevel>& eps) {
  DivergenceCheck out;
  RegimeConfig cfg;
  cfg.regime = regime;
  const LimitSetup setup = matched_limit_setup(cfg, g, res);
  for (const EpsLevel& e : eps) {
    const MultiStructureMesh m = build_multistructure(g, res, e.r);
    const double r = e.r, h = e.h;
    EpsState s;
    s.psi_a = m.a.map_nodes([r](const Vec3& x) {
      const double z = x(2);
      Mat3x2 B;
      B << 0.0, 0.2 * z, -0.2 * z, 0.0, 0.1 * z, -0.1 * z * z;
      return Vec3(Vec3(r * x(0), r * x(1), z) + 0.1 * Vec3(std::sin(z), z * z, 0.5 * z) + r * B * Vec2(x(0), x(1)));
    });
    s.psi_b = m.b.map_nodes([h](const Vec3& x) {
      const Vec3 w = 0.1 * Vec3(x(0) * x(1), std::sin(x(0)), x(0) * x(0));
      const Vec3 beta = 0.1 * Vec3(x(1), -x(0), x(0) * x(1));
      return Vec3(Vec3(x(0), x(1), h * x(2)) + w + h * x(2) * beta);
    });
    LimitState ls;
    ls.psi_a = cross_section_average(s.psi_a, m);
    ls.bbar_a = average_bbar_a(s.psi_a, r, m);
    ls.psi_b = thickness_average(s.psi_b, m);
    ls.bbar_b = average_bbar_b(s.psi_b, h, m);
    const double lim = divergence_work(H, ls, g, setup.meshes, setup.q);
    const double raw = divergence_work_eps(H, s, r, h, m);
    out.r.push_back(r);
    out.gap.push_back(std::abs(raw - lim));
  }
  return out;
}

// ---------------------------------------------------------------- Gamma study

namespace {

double lp(double sum, double p) { return std::pow(std::max(sum, 0.0), 1.0 / p); }

// Element of pm containing x, with the nodal interpolation weights.
std::pair<int, std::vector<double>> locate(const PlanarMesh& pm, const Vec2& x) {
  int best = -1;
  double best_out = std::numeric_limits<double>::infinity();
  std::vector<double> best_w;
  for (std::size_t e = 0; e < pm.elements.size(); ++e) {
    const auto& el = pm.elements[e];
    std::vector<double> w;
    double out = 0.0;
    if (el.size() == 3) {
      const Vec2 a = pm.nodes[el[0]];
      Eigen::Matrix2d J;
      J.col(0) = pm.nodes[el[1]] - a;
      J.col(1) = pm.nodes[el[2]] - a;
      const Vec2 l = J.inverse() * (x - a);
      w = {1.0 - l(0) - l(1), l(0), l(1)};
    } else {
      Vec2 lo = pm.nodes[el[0]], hi = lo;
      for (int n : el) {
        lo = lo.cwiseMin(pm.nodes[n]);
        hi = hi.cwiseMax(pm.nodes[n]);
      }
      const Vec2 t = (x - lo).cwiseQuotient(hi - lo);
      for (int n : el) {
        const Vec2 y = pm.nodes[n];
        const double u = y(0) == lo(0) ? 1.0 - t(0) : t(0), v = y(1) == lo(1) ? 1.0 - t(1) : t(1);
        w.push_back(u * v);
        out = std::max({out, -t(0), t(0) - 1.0, -t(1), t(1) - 1.0});
      }
    }
    if (el.size() == 3) out = std::max(0.0, -*std::min_element(w.begin(), w.end()));
    if (out < best_out) {
      best_out = out;
      best = static_cast<int>(e);
      best_w = w;
      if (out <= 1e-12) break;
    }
  }
  return {best, best_w};
}

// Limit fields evaluated on the eps-level layers and plate columns.
LimitState sample_limit_state(const LimitState& st, const LimitSetup& setup, const MultiStructureMesh& m) {
  LimitState out;
  const IntervalMesh& im = setup.meshes.interval;
  const double dz = m.a.spacing()(2);
  if (!st.psi_a.empty()) {
    for (int k = 0; k <= m.a.nz; ++k) {
      const double t = std::clamp(k * dz / im.h(), 0.0, static_cast<double>(im.n));
      const int e = std::min(static_cast<int>(t), im.n - 1);
      out.psi_a.push_back((1.0 - (t - e)) * st.psi_a[e] + (t - e) * st.psi_a[e + 1]);
    }
    for (int k = 0; k < m.a.nz; ++k)
      out.bbar_a.push_back(st.bbar_a[std::min(static_cast<int>((k + 0.5) * dz / im.h()), im.n - 1)]);
  }
  const PlanarMesh& pm = setup.meshes.membrane;
  if (!st.psi_b.empty()) {
    for (int j = 0; j <= m.b.ny; ++j)
      for (int i = 0; i <= m.b.nx; ++i) {
        const Vec3 x = m.b.position(i, j, m.b.nz);
        const auto [e, w] = locate(pm, Vec2(x(0), x(1)));
        Vec3 v = Vec3::Zero();
        for (std::size_t q = 0; q < w.size(); ++q) v += w[q] * st.psi_b[pm.elements[e][q]];
        out.psi_b.push_back(v);
      }
    const Vec3 db = m.b.spacing();
    for (int j = 0; j < m.b.ny; ++j)
      for (int i = 0; i < m.b.nx; ++i) {
        const Vec3 x = m.b.position(i, j, m.b.nz) + 0.5 * db;
        out.bbar_b.push_back(st.bbar_b[locate(pm, Vec2(x(0), x(1))).first]);
      }
  }
  return out;
}

GammaRow make_row(const EpsLevel& e, const EpsSolution& sol, const LimitSolution& lim, const MultiStructureMesh& m,
                  const LimitSetup& setup, double p, double slack_threshold) {
  GammaRow row;
  row.r = e.r;
  row.h = e.h;
  row.energy = sol.energy.total;
  row.gap = std::abs(sol.energy.total - lim.energy);
  row.slack = sol.slack;
  row.converged = sol.converged;
  row.flagged = !sol.converged || sol.slack > slack_threshold;

  const EpsState& s = sol.state;
  const auto ba = average_bbar_a(s.psi_a, e.r, m);
  const auto bb = average_bbar_b(s.psi_b, e.h, m);
  const Field pa = cross_section_average(s.psi_a, m);
  const Field pb = thickness_average(s.psi_b, m);
  const LimitState ref = [&] {
    LimitState st = lim.state;
    const LimitState nat = natural_limit_state(setup);
    if (setup.regime == Regime::LInf) {
      st.psi_b = nat.psi_b;
      st.bbar_b = nat.bbar_b;
    }
    if (setup.regime == Regime::LZero) {
      st.psi_a = nat.psi_a;
      st.bbar_a = nat.bbar_a;
    }
    return sample_limit_state(st, setup, m);
  }();
  const double dz = m.a.spacing()(2);
  double s1 = 0, s2 = 0, s3 = 0, s4 = 0, s5 = 0, s6 = 0;
  for (int k = 0; k < m.a.nz; ++k) {
    s1 += dz * std::pow(ba[k].norm(), p);
    s2 += dz * std::pow((ba[k] - ref.bbar_a[k]).norm(), p);
  }
  for (int k = 0; k <= m.a.nz; ++k) {
    const double w = (k == 0 || k == m.a.nz) ? 0.5 * dz : dz;
    s3 += w * std::pow((pa[k] - ref.psi_a[k]).norm(), p);
  }
  const Vec3 db = m.b.spacing();
  for (std::size_t c = 0; c < bb.size(); ++c) {
    s4 += db(0) * db(1) * std::pow(bb[c].norm(), p);
    s5 += db(0) * db(1) * std::pow((bb[c] - ref.bbar_b[c]).norm(), p);
  }
  for (int j = 0; j <= m.b.ny; ++j)
    for (int i = 0; i <= m.b.nx; ++i) {
      const double w = db(0) * db(1) * ((i == 0 || i == m.b.nx) ? 0.5 : 1.0) * ((j == 0 || j == m.b.ny) ? 0.5 : 1.0);
      const int n = i + (m.b.nx + 1) * j;
      s6 += w * std::pow((pb[n] - ref.psi_b[n]).norm(), p);
    }
  row.bbar_a_norm = lp(s1, p);
  row.dist_bbar_a = lp(s2, p);
  row.dist_psi_a = lp(s3, p);
  row.bbar_b_norm = lp(s4, p);
  row.dist_bbar_b = lp(s5, p);
  row.dist_psi_b = lp(s6, p);

  double pd = 0, nd = 0, td = 0;
  for (int k = 0; k <= m.b.nz; ++k)
    for (int j = 0; j <= m.b.ny; ++j)
      for (int i = 0; i <= m.b.nx; ++i) {
        const double w = db(0) * db(1) * db(2) * ((i == 0 || i == m.b.nx) ? 0.5 : 1.0) *
                         ((j == 0 || j == m.b.ny) ? 0.5 : 1.0) * ((k == 0 || k == m.b.nz) ? 0.5 : 1.0);
        const Vec3 x = m.b.position(i, j, k);
        pd += w * std::pow((s.psi_b[m.b.node(i, j, k)] - Vec3(x(0), x(1), 0.0)).norm(), p);
      }
  for (int k = 0; k < m.b.nz; ++k)
    for (int j = 0; j < m.b.ny; ++j)
      for (int i = 0; i < m.b.nx; ++i)
        nd += m.b.cell_volume() * std::pow((m.b.cell_gradient(s.psi_b, i, j, k).col(2) / e.h - Vec3::UnitZ()).norm(), p);
  for (int k = 0; k < m.a.nz; ++k)
    for (int j = 0; j < m.a.ny; ++j)
      for (int i = 0; i < m.a.nx; ++i)
        td += m.a.cell_volume() *
              std::pow((in_plane(m.a.cell_gradient(s.psi_a, i, j, k)) / e.r - identity_alpha()).norm(), p);
  row.plate_dev = lp(pd, p);
  row.plate_normal_dev = lp(nd, p);
  row.tube_inplane_dev = lp(td, p);
  return row;
}

}  // namespace

GammaReport gamma_study(const EnergyDensity& W, const ForceSystem& fs, const RegimeConfig& cfg, const Geometry& g,
                        const Resolution& res, const SolveOptions& opts) {
  validate(cfg);
  opts.validate();
  if (cfg.eps.size() < 3) throw ConfigError("gamma study needs at least 3 eps values");
  GammaReport rep;
  rep.regime = cfg.regime;
  rep.p = cfg.p;
  const LimitSetup setup = default_limit_setup(cfg, g, res);

  const int n = static_cast<int>(cfg.eps.size());
  std::vector<MultiStructureMesh> meshes;
  for (const EpsLevel& e : cfg.eps) meshes.push_back(build_multistructure(g, res, e.r));
  std::vector<EpsSolution> sols(n);
  std::vector<std::future<void>> pending;
  for (int i = 0; i < n; ++i) {
    auto job = [&, i] { sols[i] = solve_eps(W, fs, meshes[i], cfg.regime, cfg.eps[i].h, opts); };
    if (opts.threads > 1) {
      pending.push_back(std::async(std::launch::async, job));
      if (static_cast<int>(pending.size()) >= opts.threads) {
        for (auto& f : pending) f.get();
        pending.clear();
      }
    } else {
      job();
    }
  }
  for (auto& f : pending) f.get();

  const LimitSolution lim = solve_limit(W, fs, setup, opts);
  rep.limit_energy = lim.energy;
  rep.limit_converged = lim.converged;
  rep.limit_budget_limited = lim.budget_limited;
  rep.limit_state = lim.state;
  for (int i = 0; i < n; ++i)
    rep.rows.push_back(make_row(cfg.eps[i], sols[i], lim, meshes[i], setup, cfg.p, opts.slack_threshold));
  return rep;
}

std::string GammaReport::to_csv() const {
  std::ostringstream os;
  os.precision(12);
  os << "r,h,energy,gap,bbar_a_norm,bbar_b_norm,dist_bbar_a,dist_bbar_b,dist_psi_a,dist_psi_b,plate_dev,"
        "plate_normal_dev,tube_inplane_dev,slack,converged,flagged\n";
  for (const GammaRow& w : rows)
    os << w.r << ',' << w.h << ',' << w.energy << ',' << w.gap << ',' << w.bbar_a_norm << ',' << w.bbar_b_norm << ','
       << w.dist_bbar_a << ',' << w.dist_bbar_b << ',' << w.dist_psi_a << ',' << w.dist_psi_b << ',' << w.plate_dev
       << ',' << w.plate_normal_dev << ',' << w.tube_inplane_dev << ',' << w.slack << ',' << w.converged << ','
       << w.flagged << '\n';
  return os.str();
}

std::string GammaReport::to_json() const {
  nlohmann::json j;
  j["regime"] = to_string(regime);
  j["p"] = p;
  j["limit"] = {{"energy", limit_energy}, {"converged", limit_converged}, {"budget_limited", limit_budget_limited},
                {"string_nodes", limit_state.psi_a.size()}, {"membrane_nodes", limit_state.psi_b.size()}};
  if (!limit_state.psi_a.empty()) {
    const Vec3 v = limit_state.psi_a.front();
    j["limit"]["psi_a_at_junction"] = {v(0), v(1), v(2)};
  }
  j["rows"] = nlohmann::json::array();
  for (const GammaRow& w : rows)
    j["rows"].push_back({{"r", w.r}, {"h", w.h}, {"energy", w.energy}, {"gap", w.gap}, {"dist_bbar_a", w.dist_bbar_a},
                         {"dist_bbar_b", w.dist_bbar_b}, {"plate_dev", w.plate_dev},
                         {"plate_normal_dev", w.plate_normal_dev}, {"tube_inplane_dev", w.tube_inplane_dev},
                         {"slack", w.slack}, {"converged", w.converged}, {"flagged", w.flagged}});
  return j.dump(2);
}

}  // namespace msr
