#pragma once

#include "lidarfuse/geom.hpp"

namespace lidarfuse {

/// Parameters of the normal-vote octree filter used before the feature stage.
struct OctreeFilterParams {
  double max_voxel_size = 4.0;
  double min_voxel_size = 0.5;
  double dominant_ratio_threshold = 0.8;
  int sphere_cells = 162;  // icosphere subdivision level 2
  int min_points_per_voxel = 4;
  double angular_window_deg = 15.0;  // "similar to the dominant orientation"
};

struct NormalEstimationParams {
  double radius = 1.0;
  Vec3 viewpoint = Vec3::Zero();
};

/// Statistical k-NN distance filter. Keeps points whose mean distance to
/// their k nearest neighbors is within global_mean + stddev_mult * stddev.
/// Clouds with fewer than k+1 points pass through unchanged (skipped flag).
PointCloud remove_outliers(const PointCloud& c, int k, double stddev_mult,
                           bool* skipped = nullptr);

/// PCA normals from radius neighborhoods, oriented towards the viewpoint,
/// with curvature l0/(l0+l1+l2). Points with fewer than 3 neighbors keep a
/// zero normal and are marked invalid.
PointCloud estimate_normals(const PointCloud& c, double radius, const Vec3& viewpoint);

/// Recursive octree filter: a voxel is split while the share of normals near
/// the dominant direction stays below the threshold and the children do not
/// undercut min_voxel_size. Leaves emit their centroid with averaged normal
/// and curvature. Requires normals; throws std::invalid_argument otherwise.
PointCloud octree_downsample(const PointCloud& c, const OctreeFilterParams& p);

/// Centroid per occupied voxel of a grid anchored at the coordinate origin.
/// Output ordered by lexicographic voxel index.
PointCloud voxel_downsample(const PointCloud& c, double voxel);

}  // namespace lidarfuse
