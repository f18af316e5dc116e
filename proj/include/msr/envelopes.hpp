#pragma once

#include <cstdint>
#include <vector>

#include "msr/material.hpp"

namespace msr {

struct EnvelopeOptions {
  int points = 10;          // lamination support size N (2..10)
  int multistart = 16;      // random starts for the lamination search
  int cell_n = 4;           // cell grid resolution
  int cell_multistart = 6;  // starts per cell level
  double tol = 1e-6;
  int max_iterations = 400;
  std::uint64_t seed = 20240611;
};

struct EnvelopeResult {
  double value = 0.0;
  double direct = 0.0;   // W(target)
  bool stalled = false;  // no competitor beat the trivial one by more than tol
  std::vector<Mat3> atoms;
  std::vector<double> weights;
};

// Upper estimate of the convex envelope: best convex combination of at most N values of W.
EnvelopeResult convex_envelope(const Integrand& W, const Mat3& target, const EnvelopeOptions& o = {});
EnvelopeResult convex_envelope(const EnergyDensity& W, const Mat3& target, const EnvelopeOptions& o = {});

// ((t^2-1)^+)^2: the convex envelope of (|F|^2-1)^2 at |F| = t.
double radial_envelope_oracle(double t);

// inf over b in R^{3x2} of W(b|zeta), and inf over b in R^3 of W(M_alpha|b).
EnvelopeResult reduced_W0(const EnergyDensity& W, const Vec3& zeta, int multistart = 8, std::uint64_t seed = 7);
EnvelopeResult reduced_W1(const EnergyDensity& W, const Mat3x2& Ma, int multistart = 8, std::uint64_t seed = 7);

// Periodic cell problem on the Kuhn (6 tetrahedra per voxel) P1 grid of (0,1)^3.
// Unknowns: the fluctuation of phi with zero mean x3-slope, and lambda.
struct CellResult {
  double value = 0.0;
  double direct = 0.0;
  bool stalled = false;
  int n = 0;
  double lambda = 1.0;
  std::vector<double> field;  // 3 * n * n * (n+1) nodal values
};

struct CellGrid {
  int n;
  int nodes() const { return n * n * (n + 1); }
  int node(int i, int j, int k) const { return ((i % n + n) % n) + n * (((j % n + n) % n) + n * k); }
};

// Energy (1/|cell|) * sum over tetrahedra of W at the discrete gradient; fills grad when non-null
// (grad has field.size()+1 entries, the last one for lambda).
double cell_energy(const Integrand& W, const Mat3& target, int n, const double* field, double lambda,
                   double* grad);
// Kuhn-P1 interpolation of an n-grid field onto the 2n-grid.
std::vector<double> prolong_cell_field(const std::vector<double>& coarse, int n);

CellResult cell_qcw(const Integrand& W, const Mat3& target, const EnvelopeOptions& o = {});
CellResult cell_qcw(const EnergyDensity& W, const Mat3& target, const EnvelopeOptions& o = {});
CellResult cell_qcw_from(const Integrand& W, const Mat3& target, int n, const std::vector<std::vector<double>>& starts,
                         const std::vector<double>& lambdas, const EnvelopeOptions& o);

struct ChainRow {
  Mat3 F;
  double w = 0.0, convex = 0.0, cell = 0.0;
};
struct ChainReport {
  std::vector<ChainRow> rows;
  std::vector<std::size_t> violations;  // indices of failing rows
  double lower_slack = 2e-5;            // convex <= cell + lower_slack
  double upper_slack = 1e-9;            // cell <= W + upper_slack
  bool ok() const { return violations.empty(); }
};
ChainReport verify_envelope_chain(const EnergyDensity& W, const std::vector<Mat3>& samples, const EnvelopeOptions& o = {},
                                  double lower_slack = 2e-5, double upper_slack = 1e-9);

// Explicit two-piece (theta, eta) construction on (0,1) for the pairs (M_i, b_i) = (M_3-column, M_alpha).
struct Cross1DReport {
  double lambda = 0.5;
  double theta_at_0 = 0.0, theta_at_1 = 0.0;  // |theta| at the end points
  double eta_mean = 0.0;                      // |mean of eta|
  double lhs = 0.0;                           // W(b|M) at the averages
  double rhs = 0.0;                           // integral over (0,1) of W(b+eta | M+theta')
  double gap = 0.0;                           // rhs - lhs
};
Cross1DReport cross_convex_1d_check(const EnergyDensity& W, const Vec3& M1, const Mat3x2& b1, const Vec3& M2,
                                    const Mat3x2& b2, double lambda);

struct CommuteReport {
  std::vector<double> scaled, unscaled;
  double max_diff = 0.0;
};
CommuteReport envelope_scaling_commute(const EnergyDensity& W, double r, const std::vector<Mat3>& samples,
                                       const EnvelopeOptions& o = {});

}  // namespace msr
