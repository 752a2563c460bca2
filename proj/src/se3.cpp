#include "lidarfuse/se3.hpp"

#include <cmath>

namespace lidarfuse::se3 {

namespace {
constexpr double kSmallAngle = 1e-7;
}

Mat3 hat(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return m;
}

Mat3 exp_so3(const Vec3& phi) {
  const double theta = phi.norm();
  if (theta < kSmallAngle) {
    return Mat3::Identity() + hat(phi) + 0.5 * hat(phi) * hat(phi);
  }
  const Mat3 k = hat(phi / theta);
  return Mat3::Identity() + std::sin(theta) * k + (1.0 - std::cos(theta)) * k * k;
}

Vec3 log_so3(const Mat3& r) {
  // Quaternion route: stable at both theta -> 0 and theta -> pi.
  Eigen::Quaterniond q(r);
  q.normalize();
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  const Vec3 v(q.x(), q.y(), q.z());
  const double vn = v.norm();
  const double theta = 2.0 * std::atan2(vn, q.w());
  if (vn < kSmallAngle) return 2.0 * v;
  return (theta / vn) * v;
}

Mat3 left_jacobian_so3(const Vec3& phi) {
  const double theta = phi.norm();
  const Mat3 px = hat(phi);
  if (theta < kSmallAngle) {
    return Mat3::Identity() + 0.5 * px + (1.0 / 6.0) * px * px;
  }
  const double t2 = theta * theta;
  return Mat3::Identity() + ((1.0 - std::cos(theta)) / t2) * px +
         ((theta - std::sin(theta)) / (t2 * theta)) * px * px;
}

Mat3 left_jacobian_inv_so3(const Vec3& phi) {
  const double theta = phi.norm();
  const Mat3 px = hat(phi);
  if (theta < kSmallAngle) {
    return Mat3::Identity() - 0.5 * px + (1.0 / 12.0) * px * px;
  }
  const double coeff =
      1.0 / (theta * theta) - (1.0 + std::cos(theta)) / (2.0 * theta * std::sin(theta));
  return Mat3::Identity() - 0.5 * px + coeff * px * px;
}

RigidTransform exp(const Vec6& xi) {
  const Vec3 rho = xi.head<3>();
  const Vec3 phi = xi.tail<3>();
  RigidTransform t;
  t.rotation = exp_so3(phi);
  t.translation = left_jacobian_so3(phi) * rho;
  return t;
}

Vec6 log(const RigidTransform& t) {
  Vec6 xi;
  const Vec3 phi = log_so3(t.rotation);
  xi.tail<3>() = phi;
  xi.head<3>() = left_jacobian_inv_so3(phi) * t.translation;
  return xi;
}

Mat6 adjoint(const RigidTransform& t) {
  Mat6 ad = Mat6::Zero();
  ad.topLeftCorner<3, 3>() = t.rotation;
  ad.topRightCorner<3, 3>() = hat(t.translation) * t.rotation;
  ad.bottomRightCorner<3, 3>() = t.rotation;
  return ad;
}

namespace {

// Q block of the SE(3) left Jacobian (Barfoot's closed form).
Mat3 q_matrix(const Vec3& rho, const Vec3& phi) {
  const Mat3 rx = hat(rho);
  const Mat3 px = hat(phi);
  const double theta = phi.norm();
  double c1, c2, c3;
  if (theta < 1e-4) {
    // Taylor expansions; the closed forms lose precision near zero.
    const double t2 = theta * theta;
    c1 = 1.0 / 6.0 - t2 / 120.0;
    c2 = 1.0 / 24.0 - t2 / 720.0;
    c3 = 1.0 / 120.0 - t2 / 2520.0;
  } else {
    const double t2 = theta * theta;
    const double t4 = t2 * t2;
    const double s = std::sin(theta), c = std::cos(theta);
    c1 = (theta - s) / (t2 * theta);
    c2 = (1.0 - t2 / 2.0 - c) / t4;
    c3 = (c2 - 3.0 * (theta - s - t2 * theta / 6.0) / (t4 * theta)) / 2.0;
  }
  return 0.5 * rx + c1 * (px * rx + rx * px + px * rx * px) -
         c2 * (px * px * rx + rx * px * px - 3.0 * px * rx * px) -
         c3 * (px * rx * px * px + px * px * rx * px);
}

}  // namespace

Mat6 left_jacobian(const Vec6& xi) {
  const Vec3 rho = xi.head<3>();
  const Vec3 phi = xi.tail<3>();
  const Mat3 jl = left_jacobian_so3(phi);
  Mat6 j = Mat6::Zero();
  j.topLeftCorner<3, 3>() = jl;
  j.topRightCorner<3, 3>() = q_matrix(rho, phi);
  j.bottomRightCorner<3, 3>() = jl;
  return j;
}

Mat6 left_jacobian_inv(const Vec6& xi) {
  const Vec3 rho = xi.head<3>();
  const Vec3 phi = xi.tail<3>();
  const Mat3 jli = left_jacobian_inv_so3(phi);
  const Mat3 q = q_matrix(rho, phi);
  Mat6 j = Mat6::Zero();
  j.topLeftCorner<3, 3>() = jli;
  j.topRightCorner<3, 3>() = -jli * q * jli;
  j.bottomRightCorner<3, 3>() = jli;
  return j;
}

}  // namespace lidarfuse::se3
