#include "lidarfuse/geom.hpp"

#include <algorithm>
#include <cmath>

namespace lidarfuse {

double UnitQuaternion::norm() const {
  return std::sqrt(w * w + x * x + y * y + z * z);
}

UnitQuaternion UnitQuaternion::normalized() const {
  const double n = norm();
  return {w / n, x / n, y / n, z / n};
}

UnitQuaternion quat_from_matrix(const Mat3& r) {
  Eigen::Quaterniond q(r);
  q.normalize();
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  return {q.w(), q.x(), q.y(), q.z()};
}

Mat3 quat_to_matrix(const UnitQuaternion& q) {
  return Eigen::Quaterniond(q.w, q.x, q.y, q.z).normalized().toRotationMatrix();
}

Mat3 rot_x(double angle) { return Eigen::AngleAxisd(angle, Vec3::UnitX()).toRotationMatrix(); }
Mat3 rot_y(double angle) { return Eigen::AngleAxisd(angle, Vec3::UnitY()).toRotationMatrix(); }
Mat3 rot_z(double angle) { return Eigen::AngleAxisd(angle, Vec3::UnitZ()).toRotationMatrix(); }

RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
  RigidTransform out;
  out.rotation = a.rotation * b.rotation;
  out.translation = a.rotation * b.translation + a.translation;
  if (std::abs(out.rotation.determinant() - 1.0) > 1e-9) {
    out.rotation = quat_to_matrix(quat_from_matrix(out.rotation));
  }
  return out;
}

RigidTransform invert(const RigidTransform& t) {
  RigidTransform out;
  out.rotation = t.rotation.transpose();
  out.translation = -(out.rotation * t.translation);
  return out;
}

bool is_rotation(const Mat3& r, double tol) {
  const Mat3 should_be_identity = r * r.transpose();
  if ((should_be_identity - Mat3::Identity()).cwiseAbs().maxCoeff() > tol) return false;
  return std::abs(r.determinant() - 1.0) <= tol;
}

double rotation_angle(const Mat3& r) {
  const double arg = std::clamp((r.trace() - 1.0) / 2.0, -1.0, 1.0);
  return std::acos(arg);
}

PointCloud transform_cloud(const RigidTransform& t, const PointCloud& c) {
  PointCloud out = c;
  for (auto& p : out.points) p = t.apply(p);
  for (auto& n : out.normals) n = t.rotation * n;
  return out;
}

PointCloud select_points(const PointCloud& c, const std::vector<int>& indices) {
  PointCloud out;
  out.sensor_id = c.sensor_id;
  out.timestamp = c.timestamp;
  out.points.reserve(indices.size());
  for (int i : indices) out.points.push_back(c.points[i]);
  if (c.has_normals()) {
    out.normals.reserve(indices.size());
    out.normal_valid.reserve(indices.size());
    for (int i : indices) {
      out.normals.push_back(c.normals[i]);
      out.normal_valid.push_back(c.normal_valid.empty() ? 1 : c.normal_valid[i]);
    }
  }
  if (c.has_curvature()) {
    out.curvature.reserve(indices.size());
    for (int i : indices) out.curvature.push_back(c.curvature[i]);
  }
  return out;
}

}  // namespace lidarfuse
