#pragma once

#include <Eigen/Dense>
#include <stdexcept>

namespace msr {

using Mat3 = Eigen::Matrix3d;
using Mat3x2 = Eigen::Matrix<double, 3, 2>;
using Vec3 = Eigen::Vector3d;
using Vec2 = Eigen::Vector2d;

class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// (M_alpha | M_3)
inline Mat3 join(const Mat3x2& Ma, const Vec3& M3) {
  Mat3 M;
  M.leftCols<2>() = Ma;
  M.col(2) = M3;
  return M;
}
inline Mat3x2 in_plane(const Mat3& M) { return M.leftCols<2>(); }
inline Vec3 normal_col(const Mat3& M) { return M.col(2); }

inline Mat3x2 identity_alpha() {
  Mat3x2 I = Mat3x2::Zero();
  I(0, 0) = 1.0;
  I(1, 1) = 1.0;
  return I;
}

struct Svd3 {
  Mat3 U;
  Vec3 sigma;
  Mat3 V;
};

// det U = det V = +1; a reflection is carried by the sign of sigma(2).
Svd3 svd3(const Mat3& M);

Mat3 project_rotation(const Mat3& M);

// SO(3), or SO(3) u SO(3)*delta*I when delta != 1.
struct WellSet {
  bool double_well = false;
  double delta = 1.0;

  static WellSet single() { return {}; }
  static WellSet conformal(double delta);
  // Accepts only A = delta*I; anything else is a configuration error.
  static WellSet from_matrix(const Mat3& A);

  // nearest element of the well set
  Mat3 nearest(const Mat3& M) const;
};

double dist_to_wells(const Mat3& M, const WellSet& K, double p);

Mat3 random_rotation(double u1, double u2, double u3);

}  // namespace msr
