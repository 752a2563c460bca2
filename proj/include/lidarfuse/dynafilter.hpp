#pragma once

#include "lidarfuse/geom.hpp"

#include <cstdint>
#include <map>
#include <ostream>
#include <utility>
#include <vector>

namespace lidarfuse {

struct SphericalPoint {
  double range = 0.0;
  double azimuth = 0.0;    // [-pi, pi)
  double elevation = 0.0;  // [-pi/2, pi/2]
};

SphericalPoint to_spherical(const Vec3& p);

/// Angular bin index over (azimuth, elevation) used for cone queries.
/// One grid per cloud; rebuilt only when the cloud changes.
class SphericalGrid {
 public:
  SphericalGrid() = default;
  SphericalGrid(const std::vector<Vec3>& points, double cell_size);

  /// Indices of points whose direction is within half_angle of dir.
  void cone_search(const Vec3& dir, double half_angle, std::vector<int>& out) const;

  const std::vector<double>& ranges() const { return ranges_; }
  const std::vector<Vec3>& directions() const { return dirs_; }

 private:
  double cell_ = 0.0;
  int n_az_ = 0, n_el_ = 0;
  std::vector<std::vector<int>> bins_;
  std::vector<Vec3> dirs_;
  std::vector<double> ranges_;
};

struct ChangeDetectionResult {
  std::vector<int> additions;     // indices into the query cloud
  std::vector<int> subtractions;  // indices into the reference cloud
  int unknown = 0;                // points with empty cone neighborhoods
};

/// Spherical-coordinate change detection between two scans of the same
/// sensor. The query is pre-aligned into the reference frame; a query point
/// is an addition when every reference point in its cone lies farther by at
/// least range_threshold, a reference point is a subtraction when every
/// query point in its cone does.
ChangeDetectionResult detect_changes(const PointCloud& reference, const PointCloud& query,
                                     const RigidTransform& prealign, double cone_half_angle,
                                     double range_threshold);

/// Variant reusing a prebuilt reference grid (the first frame is fixed).
ChangeDetectionResult detect_changes(const SphericalGrid& reference_grid, const PointCloud& query,
                                     const RigidTransform& prealign, double cone_half_angle,
                                     double range_threshold);

/// Attenuated ground-projected record of scene regions repeatedly observed
/// as dynamic, kept in the sensor's first-frame coordinates.
struct BackgroundModel {
  double cell_size = 0.5;
  double attenuation = 0.98;
  double insertion_weight = 0.3;
  std::map<std::pair<std::int64_t, std::int64_t>, double> cells;

  double weight_at(const Vec3& p) const;
};

/// Decays all cell weights by the attenuation factor, then bumps every cell
/// containing a dynamic point by insertion_weight (clamped to 1). Points
/// must already be in the model's frame.
void update_background_model(BackgroundModel& m, const PointCloud& dynamic_points);

/// Partitions the cloud by model weight at the pre-aligned position; points
/// at or above weight_threshold are dynamic. Outputs stay in the cloud's
/// original frame.
std::pair<PointCloud, PointCloud> split_static_dynamic(const PointCloud& c,
                                                       const BackgroundModel& m,
                                                       const RigidTransform& prealign,
                                                       double weight_threshold);

/// Debug export: one "x,y,weight" row per cell (cell centers).
void export_model_csv(const BackgroundModel& m, std::ostream& os);

}  // namespace lidarfuse
