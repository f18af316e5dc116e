#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "msr/tensor.hpp"

namespace msr {

using Field = std::vector<Vec3>;

// omega_a = (-sa,sa)^2, omega_b = (-sb,sb)^2, tube height L.
struct Geometry {
  double sa = 0.25;
  double sb = 1.0;
  double L = 1.0;
  double abar() const { return 4.0 * sa * sa; }
  double perimeter_a() const { return 8.0 * sa; }
  void validate() const;
};

// Tensor-product trilinear hex grid on a box.
struct HexGrid {
  int nx = 1, ny = 1, nz = 1;
  Vec3 lo = Vec3::Zero(), hi = Vec3::Ones();

  int nodes() const { return (nx + 1) * (ny + 1) * (nz + 1); }
  int cells() const { return nx * ny * nz; }
  int node(int i, int j, int k) const { return i + (nx + 1) * (j + (ny + 1) * k); }
  int cell(int i, int j, int k) const { return i + nx * (j + ny * k); }
  Vec3 spacing() const { return Vec3((hi(0) - lo(0)) / nx, (hi(1) - lo(1)) / ny, (hi(2) - lo(2)) / nz); }
  Vec3 position(int i, int j, int k) const;
  Vec3 cell_center(int i, int j, int k) const;
  double cell_volume() const { const Vec3 d = spacing(); return d(0) * d(1) * d(2); }
  std::array<int, 8> cell_nodes(int i, int j, int k) const;
  // columns d/dx, d/dy, d/dz of the trilinear interpolant at the cell center
  Mat3 cell_gradient(const Field& psi, int i, int j, int k) const;
  // adds dE/dpsi for E = <P, cell_gradient> to grad
  void scatter_cell_gradient(const Mat3& P, int i, int j, int k, Field& grad) const;
  Field map_nodes(const std::function<Vec3(const Vec3&)>& f) const;
};

// Each tube bottom node takes the bilinear interpolation of four plate top nodes at r*x_alpha.
struct JunctionEntry {
  int slave = -1;
  std::array<int, 4> masters{};
  std::array<double, 4> weights{};
  Vec2 target = Vec2::Zero();
};

struct Resolution {
  int na = 8, nz = 16;  // tube cross-section cells per side, tube layers
  int nb = 24, nh = 6;  // plate cells per side, plate layers
  int interval = 64;    // string elements for standalone limit solves
  int tri_squares = 20; // graded membrane triangulation: squares per side (2 triangles each)
};

struct MultiStructureMesh {
  Geometry geom;
  Resolution res;
  double r = 1.0;
  HexGrid a, b;
  std::vector<JunctionEntry> junction;
  std::vector<char> dirichlet_a, dirichlet_b;  // Gamma_a: tube top face; Gamma_b: plate lateral faces
  std::vector<int> slave_of_a;                  // junction entry index per tube node, -1 otherwise
};

MultiStructureMesh build_multistructure(const Geometry& g, const Resolution& res, double r_eps);

// Overwrite tube bottom-face values by the interpolated plate top-face values.
void apply_junction(Field& psi_a, const Field& psi_b, const MultiStructureMesh& m);
// Move bottom-face gradient entries onto their plate masters (zeroing the slaves).
void junction_adjoint(Field& grad_a, Field& grad_b, const MultiStructureMesh& m);

// r^{-1} * integral over omega_a of grad_alpha psi, one value per tube layer
std::vector<Mat3x2> average_bbar_a(const Field& psi_a, double r, const MultiStructureMesh& m);
// h^{-1} * integral over (-1,0) of d3 psi, one value per plate column (ij cell index)
std::vector<Vec3> average_bbar_b(const Field& psi_b, double h, const MultiStructureMesh& m);
// cross-section average over omega_a per tube node level, and x3-average per plate column node
Field cross_section_average(const Field& psi_a, const MultiStructureMesh& m);
Field thickness_average(const Field& psi_b, const MultiStructureMesh& m);

// Uniform P1 mesh of (0,L).
struct IntervalMesh {
  double L = 1.0;
  int n = 64;
  double h() const { return L / n; }
  double node(int k) const { return L * k / n; }
  double center(int e) const { return L * (e + 0.5) / n; }
};

// Planar mesh of omega_b with per-element gradient coefficients:
// grad psi on element e = sum_v psi[v] (x) coef[e][v].
struct PlanarMesh {
  std::vector<Vec2> nodes;
  std::vector<std::vector<int>> elements;
  std::vector<std::vector<Vec2>> coef;
  std::vector<double> area;
  std::vector<Vec2> centers;
  std::vector<char> boundary;
  int origin = -1;

  Mat3x2 gradient(const Field& psi, int e) const;
  void scatter_gradient(const Mat3x2& P, int e, Field& grad) const;
  // value at the element center (nodal average, exact for P1 triangles and bilinear quads)
  Vec3 center_value(const Field& psi, int e) const;
  double total_area() const;
};

// Squares graded toward 0 split into two triangles each.
PlanarMesh graded_triangulation(double sb, int squares_per_side);
// nb x nb quads, one-point center gradient: the top face of the plate grid.
PlanarMesh quad_membrane(double sb, int nb);

struct CapacityResult {
  double closed_form = 0.0;
  double fem = 0.0;
  int nodes = 0;
};
// p-capacity of the disc of radius r inside the disc of radius sqrt(r).
double annulus_capacity_closed_form(double p, double r);
CapacityResult annulus_p_capacity(double p, double r, int nodes = 400);

// Nodal deformation of the two 3D components.
struct EpsState {
  Field psi_a, psi_b;
};

// Reduced unknowns: string nodes and moments on the interval, membrane nodes and moments on the planar mesh.
struct LimitState {
  Field psi_a;
  std::vector<Mat3x2> bbar_a;
  Field psi_b;
  std::vector<Vec3> bbar_b;
};

void write_field_csv(const std::string& path, const HexGrid& g, const Field& psi);
std::string mesh_summary_json(const MultiStructureMesh& m);

}  // namespace msr
