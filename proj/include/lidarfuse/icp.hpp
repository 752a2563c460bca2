#pragma once

#include "lidarfuse/geom.hpp"
#include "lidarfuse/kdtree.hpp"

#include <utility>
#include <vector>

namespace lidarfuse {

struct GicpParams {
  double max_correspondence_distance = 2.0;
  int max_iterations = 64;
  double translation_epsilon = 1e-4;  // meters
  double rotation_epsilon = 1e-4;     // radians
  int covariance_k = 20;
  double epsilon_plane = 1e-3;
};

struct GicpResult {
  RigidTransform transform;
  bool converged = false;
  int iterations = 0;
  double final_cost = 0.0;
  int correspondences = 0;
  // (cost before, cost after) per accepted step, under that step's fixed
  // correspondence set. After <= before holds for every entry.
  std::vector<std::pair<double, double>> step_costs;
};

/// Cloud prepared for registration: kd-tree plus regularized local
/// covariances (eigenvalues clamped to (epsilon_plane, 1, 1)). Built once,
/// shared by every edge the cloud participates in.
class GicpCloud {
 public:
  GicpCloud(const PointCloud& c, int covariance_k, double epsilon_plane);

  const std::vector<Vec3>& points() const { return points_; }
  const KdTree3& tree() const { return tree_; }
  const std::vector<Mat3>& covariances() const { return covariances_; }
  std::size_t size() const { return points_.size(); }

 private:
  std::vector<Vec3> points_;
  KdTree3 tree_;
  std::vector<Mat3> covariances_;
};

/// Plane-to-plane generalized ICP. Gauss-Newton with step damping on a
/// 6-parameter local parameterization, re-linearized every iteration.
/// Returns converged=false with the init transform when no correspondences
/// exist under init.
GicpResult gicp(const GicpCloud& src, const GicpCloud& tgt, const RigidTransform& init,
                const GicpParams& p);

GicpResult gicp(const PointCloud& src, const PointCloud& tgt, const RigidTransform& init,
                const GicpParams& p);

}  // namespace lidarfuse
