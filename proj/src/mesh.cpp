#include "msr/mesh.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

namespace msr {

void Geometry::validate() const {
  if (!(sa > 0.0 && sa < sb)) throw ConfigError("geometry: need 0 < sa < sb");
  if (!(L > 0.0)) throw ConfigError("geometry: tube height L must be positive");
}

Vec3 HexGrid::position(int i, int j, int k) const {
  const Vec3 d = spacing();
  return Vec3(lo(0) + i * d(0), lo(1) + j * d(1), lo(2) + k * d(2));
}

Vec3 HexGrid::cell_center(int i, int j, int k) const {
  const Vec3 d = spacing();
  return Vec3(lo(0) + (i + 0.5) * d(0), lo(1) + (j + 0.5) * d(1), lo(2) + (k + 0.5) * d(2));
}

std::array<int, 8> HexGrid::cell_nodes(int i, int j, int k) const {
  std::array<int, 8> v{};
  for (int c = 0; c < 2; ++c)
    for (int b = 0; b < 2; ++b)
      for (int a = 0; a < 2; ++a) v[a + 2 * b + 4 * c] = node(i + a, j + b, k + c);
  return v;
}

Mat3 HexGrid::cell_gradient(const Field& psi, int i, int j, int k) const {
  const auto v = cell_nodes(i, j, k);
  const Vec3 d = spacing();
  Vec3 gx = Vec3::Zero(), gy = Vec3::Zero(), gz = Vec3::Zero();
  for (int s = 0; s < 4; ++s) {
    gx += psi[v[2 * s + 1]] - psi[v[2 * s]];
    const int b0 = (s & 1) + 4 * (s >> 1);
    gy += psi[v[b0 + 2]] - psi[v[b0]];
    gz += psi[v[s + 4]] - psi[v[s]];
  }
  Mat3 G;
  G.col(0) = gx / (4.0 * d(0));
  G.col(1) = gy / (4.0 * d(1));
  G.col(2) = gz / (4.0 * d(2));
  return G;
}

void HexGrid::scatter_cell_gradient(const Mat3& P, int i, int j, int k, Field& grad) const {
  const auto v = cell_nodes(i, j, k);
  const Vec3 d = spacing();
  const Vec3 px = P.col(0) / (4.0 * d(0)), py = P.col(1) / (4.0 * d(1)), pz = P.col(2) / (4.0 * d(2));
  for (int s = 0; s < 4; ++s) {
    grad[v[2 * s + 1]] += px;
    grad[v[2 * s]] -= px;
    const int b0 = (s & 1) + 4 * (s >> 1);
    grad[v[b0 + 2]] += py;
    grad[v[b0]] -= py;
    grad[v[s + 4]] += pz;
    grad[v[s]] -= pz;
  }
}

Field HexGrid::map_nodes(const std::function<Vec3(const Vec3&)>& f) const {
  Field out(nodes());
  for (int k = 0; k <= nz; ++k)
    for (int j = 0; j <= ny; ++j)
      for (int i = 0; i <= nx; ++i) out[node(i, j, k)] = f(position(i, j, k));
  return out;
}

MultiStructureMesh build_multistructure(const Geometry& g, const Resolution& res, double r) {
  g.validate();
  if (!(r > 0.0)) throw ConfigError("r_eps must be positive");
  if (!(r * g.sa < g.sb)) throw ConfigError("junction footprint r_eps*omega_a must lie inside omega_b");
  if (res.na < 1 || res.nz < 1 || res.nb < 2 || res.nh < 1) throw ConfigError("mesh resolutions must be positive");
  MultiStructureMesh m;
  m.geom = g;
  m.res = res;
  m.r = r;
  m.a = HexGrid{res.na, res.na, res.nz, Vec3(-g.sa, -g.sa, 0.0), Vec3(g.sa, g.sa, g.L)};
  m.b = HexGrid{res.nb, res.nb, res.nh, Vec3(-g.sb, -g.sb, -1.0), Vec3(g.sb, g.sb, 0.0)};

  m.dirichlet_a.assign(m.a.nodes(), 0);
  for (int j = 0; j <= res.na; ++j)
    for (int i = 0; i <= res.na; ++i) m.dirichlet_a[m.a.node(i, j, res.nz)] = 1;
  m.dirichlet_b.assign(m.b.nodes(), 0);
  for (int k = 0; k <= res.nh; ++k)
    for (int j = 0; j <= res.nb; ++j)
      for (int i = 0; i <= res.nb; ++i)
        if (i == 0 || j == 0 || i == res.nb || j == res.nb) m.dirichlet_b[m.b.node(i, j, k)] = 1;

  m.slave_of_a.assign(m.a.nodes(), -1);
  const Vec3 db = m.b.spacing();
  for (int j = 0; j <= res.na; ++j)
    for (int i = 0; i <= res.na; ++i) {
      JunctionEntry e;
      e.slave = m.a.node(i, j, 0);
      const Vec3 x = m.a.position(i, j, 0);
      e.target = Vec2(r * x(0), r * x(1));
      const double fx = (e.target(0) + g.sb) / db(0), fy = (e.target(1) + g.sb) / db(1);
      const int ci = std::clamp(static_cast<int>(std::floor(fx)), 0, res.nb - 1);
      const int cj = std::clamp(static_cast<int>(std::floor(fy)), 0, res.nb - 1);
      const double tx = fx - ci, ty = fy - cj;
      e.masters = {m.b.node(ci, cj, res.nh), m.b.node(ci + 1, cj, res.nh), m.b.node(ci, cj + 1, res.nh),
                   m.b.node(ci + 1, cj + 1, res.nh)};
      e.weights = {(1 - tx) * (1 - ty), tx * (1 - ty), (1 - tx) * ty, tx * ty};
      m.slave_of_a[e.slave] = static_cast<int>(m.junction.size());
      m.junction.push_back(e);
    }
  return m;
}

void apply_junction(Field& psi_a, const Field& psi_b, const MultiStructureMesh& m) {
  for (const auto& e : m.junction) {
    Vec3 v = Vec3::Zero();
    for (int q = 0; q < 4; ++q) v += e.weights[q] * psi_b[e.masters[q]];
    psi_a[e.slave] = v;
  }
}

void junction_adjoint(Field& grad_a, Field& grad_b, const MultiStructureMesh& m) {
  for (const auto& e : m.junction) {
    for (int q = 0; q < 4; ++q) grad_b[e.masters[q]] += e.weights[q] * grad_a[e.slave];
    grad_a[e.slave].setZero();
  }
}

std::vector<Mat3x2> average_bbar_a(const Field& psi_a, double r, const MultiStructureMesh& m) {
  const HexGrid& g = m.a;
  const Vec3 d = g.spacing();
  std::vector<Mat3x2> out(g.nz, Mat3x2::Zero());
  for (int k = 0; k < g.nz; ++k)
    for (int j = 0; j < g.ny; ++j)
      for (int i = 0; i < g.nx; ++i) out[k] += d(0) * d(1) * in_plane(g.cell_gradient(psi_a, i, j, k));
  for (auto& b : out) b /= r;
  return out;
}

std::vector<Vec3> average_bbar_b(const Field& psi_b, double h, const MultiStructureMesh& m) {
  const HexGrid& g = m.b;
  const Vec3 d = g.spacing();
  std::vector<Vec3> out(g.nx * g.ny, Vec3::Zero());
  for (int k = 0; k < g.nz; ++k)
    for (int j = 0; j < g.ny; ++j)
      for (int i = 0; i < g.nx; ++i) out[i + g.nx * j] += d(2) * normal_col(g.cell_gradient(psi_b, i, j, k));
  for (auto& b : out) b /= h;
  return out;
}

Field cross_section_average(const Field& psi_a, const MultiStructureMesh& m) {
  const HexGrid& g = m.a;
  Field out(g.nz + 1, Vec3::Zero());
  for (int k = 0; k <= g.nz; ++k) {
    for (int j = 0; j <= g.ny; ++j)
      for (int i = 0; i <= g.nx; ++i) {
        const double w = ((i == 0 || i == g.nx) ? 0.5 : 1.0) * ((j == 0 || j == g.ny) ? 0.5 : 1.0);
        out[k] += w * psi_a[g.node(i, j, k)];
      }
    out[k] /= static_cast<double>(g.nx * g.ny);
  }
  return out;
}

Field thickness_average(const Field& psi_b, const MultiStructureMesh& m) {
  const HexGrid& g = m.b;
  Field out((g.nx + 1) * (g.ny + 1), Vec3::Zero());
  for (int k = 0; k <= g.nz; ++k) {
    const double w = ((k == 0 || k == g.nz) ? 0.5 : 1.0) / g.nz;
    for (int j = 0; j <= g.ny; ++j)
      for (int i = 0; i <= g.nx; ++i) out[i + (g.nx + 1) * j] += w * psi_b[g.node(i, j, k)];
  }
  return out;
}

Mat3x2 PlanarMesh::gradient(const Field& psi, int e) const {
  Mat3x2 G = Mat3x2::Zero();
  for (std::size_t q = 0; q < elements[e].size(); ++q) G += psi[elements[e][q]] * coef[e][q].transpose();
  return G;
}

void PlanarMesh::scatter_gradient(const Mat3x2& P, int e, Field& grad) const {
  for (std::size_t q = 0; q < elements[e].size(); ++q) grad[elements[e][q]] += P * coef[e][q];
}

Vec3 PlanarMesh::center_value(const Field& psi, int e) const {
  Vec3 v = Vec3::Zero();
  for (int n : elements[e]) v += psi[n];
  return v / static_cast<double>(elements[e].size());
}

double PlanarMesh::total_area() const {
  double s = 0.0;
  for (double a : area) s += a;
  return s;
}

namespace {

std::vector<double> graded_axis(double sb, int squares) {
  const int half = squares / 2;
  std::vector<double> w(half);
  for (int i = 0; i < half; ++i) w[i] = std::pow(2.0, std::floor(3.0 * i / half));
  double s = 0.0;
  for (double v : w) s += v;
  std::vector<double> ax(squares + 1);
  ax[half] = 0.0;
  double acc = 0.0;
  for (int i = 0; i < half; ++i) {
    acc += sb * w[i] / s;
    ax[half + i + 1] = acc;
    ax[half - i - 1] = -acc;
  }
  ax[0] = -sb;
  ax[squares] = sb;
  return ax;
}

void finish(PlanarMesh& pm, double sb) {
  pm.boundary.assign(pm.nodes.size(), 0);
  for (std::size_t n = 0; n < pm.nodes.size(); ++n) {
    const Vec2& x = pm.nodes[n];
    if (std::abs(std::abs(x(0)) - sb) < 1e-12 || std::abs(std::abs(x(1)) - sb) < 1e-12) pm.boundary[n] = 1;
    if (x.norm() < 1e-12) pm.origin = static_cast<int>(n);
  }
}

}  // namespace

PlanarMesh graded_triangulation(double sb, int squares) {
  if (squares < 2 || squares % 2) throw ConfigError("graded triangulation needs an even number of squares per side");
  const std::vector<double> ax = graded_axis(sb, squares);
  PlanarMesh pm;
  const int n1 = squares + 1;
  for (int j = 0; j <= squares; ++j)
    for (int i = 0; i <= squares; ++i) pm.nodes.emplace_back(ax[i], ax[j]);
  auto tri = [&](int a, int b, int c) {
    const Vec2 &x0 = pm.nodes[a], &x1 = pm.nodes[b], &x2 = pm.nodes[c];
    Eigen::Matrix2d J;
    J.col(0) = x1 - x0;
    J.col(1) = x2 - x0;
    const double det = J.determinant();
    const Eigen::Matrix2d Jit = J.inverse().transpose();
    const Vec2 g1 = Jit.col(0), g2 = Jit.col(1);
    pm.elements.push_back({a, b, c});
    pm.coef.push_back({-g1 - g2, g1, g2});
    pm.area.push_back(0.5 * std::abs(det));
    pm.centers.push_back((x0 + x1 + x2) / 3.0);
  };
  for (int j = 0; j < squares; ++j)
    for (int i = 0; i < squares; ++i) {
      const int v00 = i + n1 * j, v10 = v00 + 1, v01 = v00 + n1, v11 = v01 + 1;
      // diagonal through the corner nearest the origin, so the pattern is symmetric
      const bool same = (i < squares / 2) == (j < squares / 2);
      if (same) {
        tri(v00, v10, v11);
        tri(v00, v11, v01);
      } else {
        tri(v00, v10, v01);
        tri(v10, v11, v01);
      }
    }
  finish(pm, sb);
  return pm;
}

PlanarMesh quad_membrane(double sb, int nb) {
  PlanarMesh pm;
  const double d = 2.0 * sb / nb;
  for (int j = 0; j <= nb; ++j)
    for (int i = 0; i <= nb; ++i) pm.nodes.emplace_back(-sb + i * d, -sb + j * d);
  for (int j = 0; j < nb; ++j)
    for (int i = 0; i < nb; ++i) {
      const int v00 = i + (nb + 1) * j, v10 = v00 + 1, v01 = v00 + nb + 1, v11 = v01 + 1;
      pm.elements.push_back({v00, v10, v01, v11});
      const double c = 0.5 / d;
      pm.coef.push_back({Vec2(-c, -c), Vec2(c, -c), Vec2(-c, c), Vec2(c, c)});
      pm.area.push_back(d * d);
      pm.centers.emplace_back(-sb + (i + 0.5) * d, -sb + (j + 0.5) * d);
    }
  finish(pm, sb);
  return pm;
}

double annulus_capacity_closed_form(double p, double r) {
  if (!(p > 1.0 && p <= 2.0)) throw ConfigError("capacity: p must lie in (1,2]");
  if (!(r > 0.0 && r < 1.0)) throw ConfigError("capacity: r must lie in (0,1)");
  constexpr double two_pi = 2.0 * std::numbers::pi;
  if (p == 2.0) return two_pi / (-std::log(std::sqrt(r)));
  const double e = (p - 2.0) / (p - 1.0);
  return two_pi * std::pow(std::abs(2.0 - p) / (p - 1.0), p - 1.0) *
         std::pow(std::abs(std::pow(r, 0.5 * e) - std::pow(r, e)), 1.0 - p);
}

CapacityResult annulus_p_capacity(double p, double r, int nodes) {
  CapacityResult res;
  res.closed_form = annulus_capacity_closed_form(p, r);
  if (nodes < 2) throw ConfigError("capacity: need at least 2 radial nodes");
  res.nodes = nodes;
  // radial P1 on log-spaced nodes; the discrete minimizer distributes the unit drop with
  // |jump_e| proportional to w_e^{-1/(p-1)}, giving energy (sum w_e^{-1/(p-1)})^{1-p}
  const double r1 = r, r2 = std::sqrt(r);
  double s = 0.0;
  for (int i = 0; i + 1 < nodes; ++i) {
    const double a = r1 * std::pow(r2 / r1, static_cast<double>(i) / (nodes - 1));
    const double b = r1 * std::pow(r2 / r1, static_cast<double>(i + 1) / (nodes - 1));
    const double w = std::numbers::pi * (b * b - a * a) / std::pow(b - a, p);
    s += std::pow(w, -1.0 / (p - 1.0));
  }
  res.fem = std::pow(s, 1.0 - p);
  return res;
}

void write_field_csv(const std::string& path, const HexGrid& g, const Field& psi) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "x,y,z,v1,v2,v3\n";
  out.precision(17);
  for (int k = 0; k <= g.nz; ++k)
    for (int j = 0; j <= g.ny; ++j)
      for (int i = 0; i <= g.nx; ++i) {
        const Vec3 x = g.position(i, j, k);
        const Vec3& v = psi[g.node(i, j, k)];
        out << x(0) << ',' << x(1) << ',' << x(2) << ',' << v(0) << ',' << v(1) << ',' << v(2) << '\n';
      }
}

std::string mesh_summary_json(const MultiStructureMesh& m) {
  nlohmann::json j;
  j["r_eps"] = m.r;
  j["geometry"] = {{"sa", m.geom.sa}, {"sb", m.geom.sb}, {"L", m.geom.L}, {"abar", m.geom.abar()}};
  j["tube"] = {{"cells", {m.a.nx, m.a.ny, m.a.nz}}, {"nodes", m.a.nodes()},
               {"volume", m.a.cell_volume() * m.a.cells()}};
  j["plate"] = {{"cells", {m.b.nx, m.b.ny, m.b.nz}}, {"nodes", m.b.nodes()},
                {"volume", m.b.cell_volume() * m.b.cells()}};
  double tmax = 0.0;
  for (const auto& e : m.junction) tmax = std::max(tmax, e.target.cwiseAbs().maxCoeff());
  j["junction"] = {{"nodes", m.junction.size()}, {"max_abs_target", tmax}};
  int da = 0, db = 0;
  for (char c : m.dirichlet_a) da += c;
  for (char c : m.dirichlet_b) db += c;
  j["tags"] = {{"gamma_a_nodes", da}, {"gamma_b_nodes", db}};
  return j.dump(2);
}

}  // namespace msr
