#include "msr/tensor.hpp"

#include <cmath>

namespace msr {

Svd3 svd3(const Mat3& M) {
  Eigen::JacobiSVD<Mat3> svd(M, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Svd3 out{svd.matrixU(), svd.singularValues(), svd.matrixV()};
  if (out.U.determinant() < 0) {
    out.U.col(2) *= -1.0;
    out.sigma(2) *= -1.0;
  }
  if (out.V.determinant() < 0) {
    out.V.col(2) *= -1.0;
    out.sigma(2) *= -1.0;
  }
  return out;
}

Mat3 project_rotation(const Mat3& M) {
  const Svd3 s = svd3(M);
  // U, V are already proper, so U V^T is the Procrustes minimizer.
  return s.U * s.V.transpose();
}

WellSet WellSet::conformal(double delta) {
  if (!(delta > 0.0) || !std::isfinite(delta))
    throw ConfigError("second well factor delta must be positive and finite");
  if (std::abs(delta - 1.0) < 1e-12)
    throw ConfigError("second well A = delta*I must not be a rotation (delta != 1)");
  return {true, delta};
}

WellSet WellSet::from_matrix(const Mat3& A) {
  const double d = A.trace() / 3.0;
  if ((A - d * Mat3::Identity()).norm() > 1e-12 * (1.0 + std::abs(d)))
    throw ConfigError("only conformal second wells A = delta*I are supported");
  return conformal(d);
}

Mat3 WellSet::nearest(const Mat3& M) const {
  const Mat3 R = project_rotation(M);
  if (!double_well) return R;
  const Mat3 R2 = delta * R;
  return (M - R).squaredNorm() <= (M - R2).squaredNorm() ? R : R2;
}

double dist_to_wells(const Mat3& M, const WellSet& K, double p) {
  if (!(p > 1.0)) throw ConfigError("distance exponent p must exceed 1");
  const double d = (M - K.nearest(M)).norm();
  return std::pow(d, p);
}

Mat3 random_rotation(double u1, double u2, double u3) {
  // Shoemake's uniform quaternion from three U(0,1) samples.
  const double a = std::sqrt(1.0 - u1), b = std::sqrt(u1);
  const double t1 = 2.0 * M_PI * u2, t2 = 2.0 * M_PI * u3;
  Eigen::Quaterniond q(b * std::cos(t2), a * std::sin(t1), a * std::cos(t1), b * std::sin(t2));
  return q.normalized().toRotationMatrix();
}

}  // namespace msr
