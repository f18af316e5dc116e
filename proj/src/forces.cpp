#include "msr/forces.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace msr {

DivergenceLoads::DivergenceLoads(const MatField& Ha, const MatField& Hb) : Ha_(Ha), Hb_(Hb) {
  if (!in_plane(Ha.lin[0]).isZero(0) || !in_plane(Ha.lin[1]).isZero(0))
    throw ConfigError("divergence loads: the in-plane columns of H^a may depend on x3 only");
  if (!normal_col(Hb.lin[2]).isZero(0))
    throw ConfigError("divergence loads: the third column of H^b may depend on x_alpha only");
}

void ForceSystem::validate() const {
  if (!calGa.lin[0].isZero(0) || !calGa.lin[1].isZero(0))
    throw ConfigError("forces: the tube moment matrix calG^a may depend on x3 only");
}

bool ForceSystem::is_zero() const {
  return fa.is_zero() && ga.is_zero() && fb.is_zero() && gb_plus.is_zero() && gb_minus.is_zero() && Gb.is_zero() &&
         ghat_minus.is_zero() && Ghat.is_zero() && calGa.is_zero();
}

std::string to_string(Regime r) {
  switch (r) {
    case Regime::LPlus: return "lplus";
    case Regime::LInf: return "linf";
    case Regime::LZero: return "lzero";
  }
  return "unknown";
}

Regime regime_from_string(const std::string& s) {
  if (s == "lplus") return Regime::LPlus;
  if (s == "linf") return Regime::LInf;
  if (s == "lzero") return Regime::LZero;
  throw ConfigError("unknown regime '" + s + "' (expected lplus, linf or lzero)");
}

std::vector<std::string> regime_violations(const RegimeConfig& c) {
  std::vector<std::string> v;
  if (!(c.p > 1.0)) v.push_back("exponent p must exceed 1");
  if (c.regime == Regime::LPlus && !(c.ell > 0.0)) v.push_back("lplus: ell must be positive");
  if (c.regime == Regime::LInf && !(c.p > 2.0))
    v.push_back("linf: the rigid-plate theorem requires p > 2 (\"Assume that p>2\"), got p = " + std::to_string(c.p));
  if (c.regime == Regime::LZero && !(c.p <= 2.0))
    v.push_back("lzero: the rigid-beam theorem requires p <= 2 (\"Assume that p≤2\"), got p = " +
                std::to_string(c.p));
  if (c.eps.empty()) v.push_back("eps sequence is empty");
  for (std::size_t i = 0; i < c.eps.size(); ++i) {
    const EpsLevel& e = c.eps[i];
    if (!(e.r > 0.0 && e.h > 0.0)) v.push_back("eps[" + std::to_string(i) + "]: r and h must be positive");
    if (i > 0 && !(e.r < c.eps[i - 1].r)) v.push_back("eps sequence must be strictly decreasing in r");
    if (c.regime == Regime::LPlus && std::abs(e.h - c.ell * e.r * e.r) > 1e-12 * std::max(1.0, e.h))
      v.push_back("eps[" + std::to_string(i) + "]: lplus requires h = ell * r^2");
  }
  for (std::size_t i = 1; i < c.eps.size(); ++i) {
    const EpsLevel &a = c.eps[i - 1], &b = c.eps[i];
    if (!(a.r > 0 && a.h > 0 && b.r > 0 && b.h > 0)) continue;
    if (c.regime == Regime::LInf && !(std::pow(b.h, c.p + 1) / (b.r * b.r) > std::pow(a.h, c.p + 1) / (a.r * a.r)))
      v.push_back("linf: h^{p+1}/r^2 must increase along the eps sequence (lim h^{p+1}/r^2 = infinity)");
    if (c.regime == Regime::LZero && !(b.h / std::pow(b.r, c.p + 2) < a.h / std::pow(a.r, c.p + 2)))
      v.push_back("lzero: h/r^{p+2} must decrease along the eps sequence (lim h/r^{p+2} = 0)");
  }
  return v;
}

void validate(const RegimeConfig& c) {
  const auto v = regime_violations(c);
  if (v.empty()) return;
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "; " : "") << v[i];
  throw ConfigError(os.str());
}

std::vector<EpsLevel> default_eps_sequence(Regime regime, double ell, double p, const std::vector<double>& rs) {
  std::vector<EpsLevel> out;
  for (double r : rs) {
    double h = ell * r * r;
    if (regime == Regime::LInf) h = std::pow(r, 1.0 / (p + 1.0));
    if (regime == Regime::LZero) h = std::pow(r, p + 3.0);
    out.push_back({r, h});
  }
  return out;
}

std::pair<double, double> energy_weights(Regime regime, double r, double h) {
  if (regime == Regime::LZero) return {r * r / h, 1.0};
  return {1.0, h / (r * r)};
}

EpsForces scale_forces(const ForceSystem& fs, Regime regime, double r, double h) {
  EpsForces e;
  e.fs = fs;
  e.regime = regime;
  e.r = r;
  e.h = h;
  e.ka = regime == Regime::LZero ? h / (r * r) : 1.0;
  e.kb = regime == Regime::LInf ? r * r / h : 1.0;
  return e;
}

EpsForces scale_forces(const ForceSystem& fs, const RegimeConfig& cfg, int i) {
  if (i < 0 || i >= static_cast<int>(cfg.eps.size())) throw std::out_of_range("eps index out of range");
  return scale_forces(fs, cfg.regime, cfg.eps[i].r, cfg.eps[i].h);
}

Vec3 ReducedLoads::fbar_a(double x3) const {
  const double d = 2.0 * geom.sa / q.cross;
  Vec3 s = Vec3::Zero();
  for (int j = 0; j < q.cross; ++j)
    for (int i = 0; i < q.cross; ++i)
      s += fs.fa(Vec3(-geom.sa + (i + 0.5) * d, -geom.sa + (j + 0.5) * d, x3));
  return s * d * d;
}

Vec3 ReducedLoads::gbar_a(double x3) const {
  const double d = 2.0 * geom.sa / q.cross, a = geom.sa;
  Vec3 s = Vec3::Zero();
  for (int i = 0; i < q.cross; ++i) {
    const double t = -a + (i + 0.5) * d;
    s += fs.ga(Vec3(a, t, x3)) + fs.ga(Vec3(-a, t, x3)) + fs.ga(Vec3(t, a, x3)) + fs.ga(Vec3(t, -a, x3));
  }
  return s * d;
}

Vec3 ReducedLoads::fbar_b(const Vec2& y) const {
  Vec3 s = Vec3::Zero();
  for (int k = 0; k < q.thick; ++k) s += fs.fb(Vec3(y(0), y(1), -1.0 + (k + 0.5) / q.thick));
  return s / q.thick;
}

ReducedLoads reduced_loads(const ForceSystem& fs, const Geometry& g, const LoadQuadrature& q) {
  return {fs, g, q};
}

namespace {

// Lateral faces of the tube grid: center, outer normal, area, four nodes.
template <class Fn>
void for_each_lateral_face(const HexGrid& g, Fn&& fn) {
  const Vec3 d = g.spacing();
  for (int k = 0; k < g.nz; ++k) {
    for (int j = 0; j < g.ny; ++j)
      for (int side = 0; side < 2; ++side) {
        const int i = side ? g.nx : 0;
        const Vec3 x(side ? g.hi(0) : g.lo(0), g.lo(1) + (j + 0.5) * d(1), g.lo(2) + (k + 0.5) * d(2));
        fn(x, Vec3(side ? 1.0 : -1.0, 0, 0), d(1) * d(2),
           std::array<int, 4>{g.node(i, j, k), g.node(i, j + 1, k), g.node(i, j, k + 1), g.node(i, j + 1, k + 1)});
      }
    for (int i = 0; i < g.nx; ++i)
      for (int side = 0; side < 2; ++side) {
        const int j = side ? g.ny : 0;
        const Vec3 x(g.lo(0) + (i + 0.5) * d(0), side ? g.hi(1) : g.lo(1), g.lo(2) + (k + 0.5) * d(2));
        fn(x, Vec3(0, side ? 1.0 : -1.0, 0), d(0) * d(2),
           std::array<int, 4>{g.node(i, j, k), g.node(i + 1, j, k), g.node(i, j, k + 1), g.node(i + 1, j, k + 1)});
      }
  }
}

template <class Fn>
void for_each_cell(const HexGrid& g, Fn&& fn) {
  for (int k = 0; k < g.nz; ++k)
    for (int j = 0; j < g.ny; ++j)
      for (int i = 0; i < g.nx; ++i) fn(i, j, k);
}

Vec3 cell_mean(const HexGrid& g, const Field& psi, int i, int j, int k) {
  Vec3 s = Vec3::Zero();
  for (int v : g.cell_nodes(i, j, k)) s += psi[v];
  return s / 8.0;
}

Vec3 avg4(const Field& psi, const std::array<int, 4>& v) {
  return 0.25 * (psi[v[0]] + psi[v[1]] + psi[v[2]] + psi[v[3]]);
}

// Plate top cell (i,j): the four top and four bottom nodes.
std::array<int, 4> top_nodes(const HexGrid& g, int i, int j, int k) {
  return {g.node(i, j, k), g.node(i + 1, j, k), g.node(i, j + 1, k), g.node(i + 1, j + 1, k)};
}

// Quadrature on r*omega_a: pulled-back tube bottom nodes with trapezoid weights.
struct InsidePoint {
  Vec2 y;
  double w;  // weight on omega_a (multiply by r^2 for r*omega_a)
  const JunctionEntry* e;
};

std::vector<InsidePoint> inside_points(const MultiStructureMesh& m) {
  const HexGrid& a = m.a;
  const Vec3 d = a.spacing();
  std::vector<InsidePoint> pts;
  for (const auto& e : m.junction) {
    const int i = e.slave % (a.nx + 1), j = (e.slave / (a.nx + 1)) % (a.ny + 1);
    const double w = d(0) * d(1) * ((i == 0 || i == a.nx) ? 0.5 : 1.0) * ((j == 0 || j == a.ny) ? 0.5 : 1.0);
    pts.push_back({e.target, w, &e});
  }
  return pts;
}

int bottom_of(const HexGrid& b, int top) { return top - (b.nx + 1) * (b.ny + 1) * b.nz; }

Vec3 interp_top(const Field& psi_b, const JunctionEntry& e) {
  Vec3 v = Vec3::Zero();
  for (int q = 0; q < 4; ++q) v += e.weights[q] * psi_b[e.masters[q]];
  return v;
}

Vec3 interp_bottom(const Field& psi_b, const JunctionEntry& e, const HexGrid& b) {
  Vec3 v = Vec3::Zero();
  for (int q = 0; q < 4; ++q) v += e.weights[q] * psi_b[bottom_of(b, e.masters[q])];
  return v;
}

}  // namespace

std::vector<double> outside_weights(const MultiStructureMesh& m) {
  const HexGrid& b = m.b;
  const Vec3 d = b.spacing();
  const double rs = m.r * m.geom.sa;
  auto overlap = [rs](double lo, double hi) { return std::max(0.0, std::min(hi, rs) - std::max(lo, -rs)); };
  std::vector<double> w(b.nx * b.ny);
  for (int j = 0; j < b.ny; ++j)
    for (int i = 0; i < b.nx; ++i) {
      const double x0 = b.lo(0) + i * d(0), y0 = b.lo(1) + j * d(1);
      w[i + b.nx * j] = d(0) * d(1) - overlap(x0, x0 + d(0)) * overlap(y0, y0 + d(1));
    }
  return w;
}

double work_a_raw(const Field& psi, const EpsForces& ef, const MultiStructureMesh& m) {
  const HexGrid& g = m.a;
  const double vol = g.cell_volume();
  double w = 0.0;
  for_each_cell(g, [&](int i, int j, int k) { w += vol * ef.fa(g.cell_center(i, j, k)).dot(cell_mean(g, psi, i, j, k)); });
  for_each_lateral_face(g, [&](const Vec3& x, const Vec3& nu, double area, const std::array<int, 4>& v) {
    w += area / ef.r * ef.ga(x, nu).dot(avg4(psi, v));
  });
  return w;
}

double work_a_expanded(const Field& psi, const EpsForces& ef, const MultiStructureMesh& m) {
  const HexGrid& g = m.a;
  const double vol = g.cell_volume();
  double w = 0.0;
  for_each_cell(g, [&](int i, int j, int k) {
    w += vol * ef.fs.fa(g.cell_center(i, j, k)).dot(cell_mean(g, psi, i, j, k));
  });
  for_each_lateral_face(g, [&](const Vec3& x, const Vec3&, double area, const std::array<int, 4>& v) {
    w += area * ef.fs.ga(x).dot(avg4(psi, v));
  });
  const std::vector<Mat3x2> bbar = average_bbar_a(psi, ef.r, m);
  const double dz = g.spacing()(2);
  for (int k = 0; k < g.nz; ++k) {
    const Mat3 G = ef.fs.calGa.at_x3(g.cell_center(0, 0, k)(2));
    w += dz * (in_plane(G).array() * bbar[k].array()).sum();
  }
  return ef.ka * w;
}

double work_b_raw(const Field& psi, const EpsForces& ef, const MultiStructureMesh& m) {
  const HexGrid& g = m.b;
  const double vol = g.cell_volume();
  double w = 0.0;
  for_each_cell(g, [&](int i, int j, int k) { w += vol * ef.fb(g.cell_center(i, j, k)).dot(cell_mean(g, psi, i, j, k)); });
  const std::vector<double> wout = outside_weights(m);
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      const Vec3 c = g.cell_center(i, j, 0);
      const Vec2 y(c(0), c(1));
      const Vec3 top = avg4(psi, top_nodes(g, i, j, g.nz)), bot = avg4(psi, top_nodes(g, i, j, 0));
      w += wout[i + g.nx * j] / ef.h * (ef.gb_plus(y).dot(top) + ef.gb_minus_outside(y).dot(bot));
    }
  const double r2 = ef.r * ef.r;
  for (const auto& q : inside_points(m))
    w += r2 * q.w / ef.h * ef.gb_minus_inside(q.y).dot(interp_bottom(psi, *q.e, g));
  return w;
}

double work_b_expanded(const Field& psi_a, const Field& psi, const EpsForces& ef, const MultiStructureMesh& m) {
  const HexGrid& g = m.b;
  const ForceSystem& fs = ef.fs;
  const double vol = g.cell_volume();
  double w = 0.0;
  for_each_cell(g, [&](int i, int j, int k) { w += vol * fs.fb(g.cell_center(i, j, k)).dot(cell_mean(g, psi, i, j, k)); });
  const std::vector<double> wout = outside_weights(m);
  const std::vector<Vec3> bbar = average_bbar_b(psi, ef.h, m);
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      const Vec3 c = g.cell_center(i, j, 0);
      const Vec2 y(c(0), c(1));
      const Vec3 top = avg4(psi, top_nodes(g, i, j, g.nz)), bot = avg4(psi, top_nodes(g, i, j, 0));
      w += wout[i + g.nx * j] *
           (fs.gb_plus.at(y).dot(top) - fs.gb_minus.at(y).dot(bot) + fs.Gb.at(y).dot(bbar[i + g.nx * j]));
    }
  const double r2 = ef.r * ef.r;
  for (const auto& q : inside_points(m)) {
    const Vec3 bot = interp_bottom(psi, *q.e, g), top = interp_top(psi, *q.e);
    const Vec3 G = fs.Ghat.at(q.y);
    w -= r2 * q.w * fs.ghat_minus.at(q.y).dot(bot);
    w -= r2 / ef.h * q.w * G.dot(psi_a[q.e->slave]);
    w += r2 * q.w * G.dot((top - bot) / ef.h);
  }
  return ef.kb * w;
}

LoadVectors assemble_loads(const EpsForces& ef, const MultiStructureMesh& m) {
  LoadVectors lv;
  lv.la.assign(m.a.nodes(), Vec3::Zero());
  lv.lb.assign(m.b.nodes(), Vec3::Zero());
  {
    const HexGrid& g = m.a;
    const double vol = g.cell_volume();
    for_each_cell(g, [&](int i, int j, int k) {
      const Vec3 f = vol / 8.0 * ef.fa(g.cell_center(i, j, k));
      for (int v : g.cell_nodes(i, j, k)) lv.la[v] += f;
    });
    for_each_lateral_face(g, [&](const Vec3& x, const Vec3& nu, double area, const std::array<int, 4>& v) {
      const Vec3 f = 0.25 * area / ef.r * ef.ga(x, nu);
      for (int n : v) lv.la[n] += f;
    });
  }
  const HexGrid& g = m.b;
  const double vol = g.cell_volume();
  for_each_cell(g, [&](int i, int j, int k) {
    const Vec3 f = vol / 8.0 * ef.fb(g.cell_center(i, j, k));
    for (int v : g.cell_nodes(i, j, k)) lv.lb[v] += f;
  });
  const std::vector<double> wout = outside_weights(m);
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      const Vec3 c = g.cell_center(i, j, 0);
      const Vec2 y(c(0), c(1));
      const double s = 0.25 * wout[i + g.nx * j] / ef.h;
      for (int n : top_nodes(g, i, j, g.nz)) lv.lb[n] += s * ef.gb_plus(y);
      for (int n : top_nodes(g, i, j, 0)) lv.lb[n] += s * ef.gb_minus_outside(y);
    }
  const double r2 = ef.r * ef.r;
  for (const auto& q : inside_points(m)) {
    const Vec3 f = r2 * q.w / ef.h * ef.gb_minus_inside(q.y);
    for (int c = 0; c < 4; ++c) lv.lb[bottom_of(g, q.e->masters[c])] += q.e->weights[c] * f;
  }
  return lv;
}

double string_work(const Field& psi_a, const std::vector<Mat3x2>& bbar_a, const ReducedLoads& rl,
                   const IntervalMesh& im) {
  double w = 0.0;
  for (int e = 0; e < im.n; ++e) {
    const double x = im.center(e);
    const Vec3 c = 0.5 * (psi_a[e] + psi_a[e + 1]);
    const Mat3 G = rl.fs.calGa.at_x3(x);
    w += im.h() * ((rl.fbar_a(x) + rl.gbar_a(x)).dot(c) + (in_plane(G).array() * bbar_a[e].array()).sum());
  }
  return w;
}

double membrane_work(const Field& psi_b, const std::vector<Vec3>& bbar_b, const ReducedLoads& rl,
                     const PlanarMesh& pm) {
  double w = 0.0;
  for (std::size_t e = 0; e < pm.elements.size(); ++e) {
    const Vec2& y = pm.centers[e];
    const Vec3 c = pm.center_value(psi_b, static_cast<int>(e));
    w += pm.area[e] * ((rl.fbar_b(y) + rl.fs.gb_plus.at(y) - rl.fs.gb_minus.at(y)).dot(c) + rl.fs.Gb.at(y).dot(bbar_b[e]));
  }
  return w;
}

LimitState frozen_plate(const PlanarMesh& pm) {
  LimitState s;
  for (const Vec2& x : pm.nodes) s.psi_b.emplace_back(x(0), x(1), 0.0);
  s.bbar_b.assign(pm.elements.size(), Vec3::UnitZ());
  return s;
}

LimitState frozen_beam(const IntervalMesh& im, const Geometry& g) {
  LimitState s;
  for (int k = 0; k <= im.n; ++k) s.psi_a.emplace_back(0.0, 0.0, im.node(k));
  s.bbar_a.assign(im.n, g.abar() * identity_alpha());
  return s;
}

double pseudo_coupling(const LimitState& s, const ForceSystem& fs, const Geometry& g) {
  return g.abar() * fs.Ghat.at(Vec2::Zero()).dot(s.psi_a.front());
}

namespace {

void require_string(const LimitState& s, const IntervalMesh& im) {
  if (static_cast<int>(s.psi_a.size()) != im.n + 1 || static_cast<int>(s.bbar_a.size()) != im.n)
    throw std::invalid_argument("limit state: string part does not match the interval mesh");
}
void require_membrane(const LimitState& s, const PlanarMesh& pm) {
  if (s.psi_b.size() != pm.nodes.size() || s.bbar_b.size() != pm.elements.size())
    throw std::invalid_argument("limit state: membrane part does not match the planar mesh");
}

}  // namespace

double limit_load(Regime regime, double ell, const LimitState& s, const ForceSystem& fs, const Geometry& g,
                  const LimitMeshes& lm, const LoadQuadrature& q) {
  const ReducedLoads rl = reduced_loads(fs, g, q);
  LimitState full = s;
  double w = 0.0;
  switch (regime) {
    case Regime::LPlus:
      require_string(s, lm.interval);
      require_membrane(s, lm.membrane);
      w = string_work(s.psi_a, s.bbar_a, rl, lm.interval) + ell * membrane_work(s.psi_b, s.bbar_b, rl, lm.membrane) -
          pseudo_coupling(s, fs, g);
      break;
    case Regime::LInf: {
      require_string(s, lm.interval);
      const LimitState plate = frozen_plate(lm.membrane);
      full.psi_b = plate.psi_b;
      full.bbar_b = plate.bbar_b;
      w = string_work(s.psi_a, s.bbar_a, rl, lm.interval) + membrane_work(plate.psi_b, plate.bbar_b, rl, lm.membrane);
      break;
    }
    case Regime::LZero: {
      require_membrane(s, lm.membrane);
      const LimitState beam = frozen_beam(lm.interval, g);
      full.psi_a = beam.psi_a;
      full.bbar_a = beam.bbar_a;
      w = string_work(beam.psi_a, beam.bbar_a, rl, lm.interval) + membrane_work(s.psi_b, s.bbar_b, rl, lm.membrane);
      break;
    }
  }
  if (fs.H) w += divergence_work(*fs.H, full, g, lm, q);
  return w;
}

double divergence_work(const DivergenceLoads& H, const LimitState& s, const Geometry& g, const LimitMeshes& lm,
                       const LoadQuadrature& q) {
  const IntervalMesh& im = lm.interval;
  const PlanarMesh& pm = lm.membrane;
  require_string(s, im);
  require_membrane(s, pm);
  double w = 0.0;
  const double d = 2.0 * g.sa / q.cross;
  for (int e = 0; e < im.n; ++e) {
    const double x3 = im.center(e);
    w += im.h() * (H.Ha_alpha(x3).array() * s.bbar_a[e].array()).sum();
    Vec3 h3 = Vec3::Zero();
    for (int j = 0; j < q.cross; ++j)
      for (int i = 0; i < q.cross; ++i) h3 += H.Ha3(Vec3(-g.sa + (i + 0.5) * d, -g.sa + (j + 0.5) * d, x3));
    w += d * d * h3.dot(s.psi_a[e + 1] - s.psi_a[e]);
  }
  for (std::size_t e = 0; e < pm.elements.size(); ++e) {
    const Vec2& y = pm.centers[e];
    Mat3x2 hb = Mat3x2::Zero();
    for (int k = 0; k < q.thick; ++k) hb += H.Hb_alpha(Vec3(y(0), y(1), -1.0 + (k + 0.5) / q.thick));
    hb /= q.thick;
    w += pm.area[e] * ((hb.array() * pm.gradient(s.psi_b, static_cast<int>(e)).array()).sum() + H.Hb3(y).dot(s.bbar_b[e]));
  }
  return w;
}

double divergence_work_eps(const DivergenceLoads& H, const EpsState& s, double r, double h,
                           const MultiStructureMesh& m) {
  double w = 0.0;
  for_each_cell(m.a, [&](int i, int j, int k) {
    Mat3 D = m.a.cell_gradient(s.psi_a, i, j, k);
    D.leftCols<2>() /= r;
    w += m.a.cell_volume() * (H.Ha()(m.a.cell_center(i, j, k)).array() * D.array()).sum();
  });
  for_each_cell(m.b, [&](int i, int j, int k) {
    Mat3 D = m.b.cell_gradient(s.psi_b, i, j, k);
    D.col(2) /= h;
    w += m.b.cell_volume() * (H.Hb()(m.b.cell_center(i, j, k)).array() * D.array()).sum();
  });
  return w;
}

NodalLoads forces_from_H(const std::vector<Mat3>& H, const HexGrid& g) {
  if (static_cast<int>(H.size()) != g.nodes()) throw std::invalid_argument("forces_from_H: one matrix per node");
  NodalLoads out;
  out.f.assign(g.nodes(), Vec3::Zero());
  const Vec3 d = g.spacing();
  const int n[3] = {g.nx, g.ny, g.nz};
  for (int k = 0; k <= g.nz; ++k)
    for (int j = 0; j <= g.ny; ++j)
      for (int i = 0; i <= g.nx; ++i) {
        const int idx[3] = {i, j, k};
        Vec3 div = Vec3::Zero();
        for (int c = 0; c < 3; ++c) {
          int lo[3] = {i, j, k}, hi[3] = {i, j, k};
          if (idx[c] > 0) --lo[c];
          if (idx[c] < n[c]) ++hi[c];
          const double span = (hi[c] - lo[c]) * d(c);
          div += (H[g.node(hi[0], hi[1], hi[2])].col(c) - H[g.node(lo[0], lo[1], lo[2])].col(c)) / span;
        }
        out.f[g.node(i, j, k)] = -div;
      }
  for (int face = 0; face < 6; ++face) {
    const int c = face / 2;
    const bool upper = face % 2;
    Vec3 nu = Vec3::Zero();
    nu(c) = upper ? 1.0 : -1.0;
    out.g[face].assign(g.nodes(), Vec3::Zero());
    for (int k = 0; k <= g.nz; ++k)
      for (int j = 0; j <= g.ny; ++j)
        for (int i = 0; i <= g.nx; ++i) {
          const int idx[3] = {i, j, k};
          if (idx[c] != (upper ? n[c] : 0)) continue;
          const int v = g.node(i, j, k);
          out.g[face][v] = H[v] * nu;
        }
  }
  return out;
}

double green_residual(const std::vector<Mat3>& H, const NodalLoads& L, const HexGrid& g,
                      const std::function<Vec3(const Vec3&)>& theta,
                      const std::function<Mat3(const Vec3&)>& grad_theta) {
  const Vec3 d = g.spacing();
  const int n[3] = {g.nx, g.ny, g.nz};
  auto tw = [](int i, int nn) { return (i == 0 || i == nn) ? 0.5 : 1.0; };
  double vol = 0.0, surf = 0.0;
  for (int k = 0; k <= g.nz; ++k)
    for (int j = 0; j <= g.ny; ++j)
      for (int i = 0; i <= g.nx; ++i) {
        const int v = g.node(i, j, k);
        const int idx[3] = {i, j, k};
        const Vec3 x = g.position(i, j, k);
        const double w = tw(i, g.nx) * tw(j, g.ny) * tw(k, g.nz) * d(0) * d(1) * d(2);
        vol += w * ((H[v].array() * grad_theta(x).array()).sum() - L.f[v].dot(theta(x)));
        for (int face = 0; face < 6; ++face) {
          const int c = face / 2;
          if (idx[c] != (face % 2 ? n[c] : 0)) continue;
          double ws = 1.0;
          for (int o = 0; o < 3; ++o)
            if (o != c) ws *= tw(idx[o], n[o]) * d(o);
          surf += ws * L.g[face][v].dot(theta(x));
        }
      }
  return std::abs(vol - surf);
}

CompatibilityReport check_compatibility(const EpsForces& ef, const MultiStructureMesh& m, double tol) {
  CompatibilityReport rep;
  Vec3 s = Vec3::Zero();
  const double r2 = ef.r * ef.r;
  for_each_cell(m.a, [&](int i, int j, int k) { s += r2 * m.a.cell_volume() * ef.fa(m.a.cell_center(i, j, k)); });
  for_each_lateral_face(m.a, [&](const Vec3& x, const Vec3& nu, double area, const std::array<int, 4>&) {
    s += ef.r * area * ef.ga(x, nu);
  });
  for_each_cell(m.b, [&](int i, int j, int k) { s += ef.h * m.b.cell_volume() * ef.fb(m.b.cell_center(i, j, k)); });
  const std::vector<double> wout = outside_weights(m);
  for (int j = 0; j < m.b.ny; ++j)
    for (int i = 0; i < m.b.nx; ++i) {
      const Vec3 c = m.b.cell_center(i, j, 0);
      const Vec2 y(c(0), c(1));
      s += wout[i + m.b.nx * j] * (ef.gb_plus(y) + ef.gb_minus_outside(y));
    }
  for (const auto& q : inside_points(m)) s += r2 * q.w * ef.gb_minus_inside(q.y);
  rep.resultant = s;
  rep.ok = s.norm() <= tol;
  return rep;
}

}  // namespace msr
