#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

namespace lidarfuse {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;

/// Rigid body transform (rotation + translation), the currency of the whole
/// pipeline. Maps points from its source frame into its target frame.
struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static RigidTransform identity() { return {}; }

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
};

struct UnitQuaternion {
  double w = 1.0, x = 0.0, y = 0.0, z = 0.0;

  double norm() const;
  UnitQuaternion normalized() const;
};

UnitQuaternion quat_from_matrix(const Mat3& r);
Mat3 quat_to_matrix(const UnitQuaternion& q);

Mat3 rot_x(double angle);
Mat3 rot_y(double angle);
Mat3 rot_z(double angle);

/// Applies b first, then a. Re-orthonormalizes the rotation when accumulated
/// rounding pushes |det - 1| beyond 1e-9.
RigidTransform compose(const RigidTransform& a, const RigidTransform& b);

RigidTransform invert(const RigidTransform& t);

/// True when r is orthonormal with determinant +1 within tol.
bool is_rotation(const Mat3& r, double tol = 1e-9);

/// Angle of the rotation in [0, pi]. The arccos argument is clamped to
/// [-1, 1]; tr(R) can overshoot 3 by rounding.
double rotation_angle(const Mat3& r);

/// Timestamped, sensor-attributed point set. Normals and curvature are
/// optional; when present they are parallel to points, with normal_valid
/// marking entries whose neighborhood was too sparse to estimate.
struct PointCloud {
  std::vector<Vec3> points;
  std::vector<Vec3> normals;
  std::vector<double> curvature;
  std::vector<std::uint8_t> normal_valid;
  int sensor_id = 0;
  double timestamp = 0.0;

  bool has_normals() const { return !normals.empty(); }
  bool has_curvature() const { return !curvature.empty(); }
  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

/// Maps every point p' = Rp + t and every normal n' = Rn; other metadata is
/// carried over unchanged.
PointCloud transform_cloud(const RigidTransform& t, const PointCloud& c);

/// Sub-cloud of the given point indices, attributes carried along.
PointCloud select_points(const PointCloud& c, const std::vector<int>& indices);

}  // namespace lidarfuse
