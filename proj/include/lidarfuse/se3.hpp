#pragma once

#include "lidarfuse/geom.hpp"

namespace lidarfuse::se3 {

// Tangent vectors are ordered [rho; phi] (translation block first). exp/log
// use the full SE(3) maps, i.e. t = Jl(phi) * rho, not the naive split.

Mat3 hat(const Vec3& v);

Mat3 exp_so3(const Vec3& phi);
Vec3 log_so3(const Mat3& r);

Mat3 left_jacobian_so3(const Vec3& phi);
Mat3 left_jacobian_inv_so3(const Vec3& phi);

RigidTransform exp(const Vec6& xi);
Vec6 log(const RigidTransform& t);

/// Ad(T) with T exp(xi) T^{-1} = exp(Ad(T) xi).
Mat6 adjoint(const RigidTransform& t);

Mat6 left_jacobian(const Vec6& xi);
Mat6 left_jacobian_inv(const Vec6& xi);
inline Mat6 right_jacobian_inv(const Vec6& xi) { return left_jacobian_inv(-xi); }

}  // namespace lidarfuse::se3
