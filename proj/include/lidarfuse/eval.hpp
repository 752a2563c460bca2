#pragma once

#include "lidarfuse/geom.hpp"
#include "lidarfuse/io.hpp"

#include <string>
#include <vector>

namespace lidarfuse::eval {

/// Least-squares rigid alignment T_coord mapping predicted (common-frame)
/// sensor positions onto their world-frame ground truth. Throws on collinear
/// layouts (alignment underdetermined).
RigidTransform estimate_world_alignment(const std::vector<Vec3>& pred_positions,
                                        const std::vector<Vec3>& gt_positions);

double trans_error(const Vec3& predicted, const Vec3& gt);

/// Rotation angle between the two rotations, arccos((tr(R1 R2^-1) - 1)/2).
double rot_error(const Mat3& predicted, const Mat3& gt);

double rmse(const std::vector<double>& errors);

struct FrameError {
  int time_step = 0;
  int sensor_id = 0;
  double e_trans = 0.0;  // meters
  double e_rot = 0.0;    // radians
};

struct SensorMetrics {
  int sensor_id = 0;
  double rmse_trans = 0.0;
  double rmse_rot = 0.0;
  int n_frames = 0;
};

struct MetricsReport {
  std::vector<FrameError> frame_errors;
  std::vector<SensorMetrics> per_sensor;
  double avg_rmse_trans = 0.0;  // meters, averaged over sensors
  double avg_rmse_rot = 0.0;    // radians, averaged over sensors
  bool rotation_evaluated = true;
  int missing_frames = 0;
  RigidTransform t_coord;
};

/// Aligns the predicted pose stream into the world frame with T_coord
/// estimated once from the first common time step's sensor positions, then
/// accumulates per-frame errors and per-sensor RMSE. Predicted rotations are
/// compared as R_coord * R_hat vs gt (the convention that zeroes the error
/// for perfect predictions and stays invariant under a global rigid gauge
/// transform of the predictions).
MetricsReport evaluate_run(const std::vector<PoseRecord>& predicted,
                           const std::vector<PoseRecord>& gt, bool gt_has_orientation = true);

/// Per-frame error CSV: time_step, sensor_id, e_trans_m, e_rot_rad,
/// runtime_ms. Runtimes are per frame (time_step -> ms); rows without a
/// matching entry get an empty field.
void write_frame_errors_csv(const std::string& path, const MetricsReport& report,
                            const std::vector<std::pair<int, double>>& runtimes_ms);

struct RunSummary {
  std::string scenario;
  double voxel_size = 0.0;
  double init_runtime_s = 0.0;
  double mean_cont_runtime_ms = 0.0;
  double avg_rmse_trans_cm = 0.0;
  double avg_rmse_rot_deg = 0.0;
  bool rotation_evaluated = true;
};

void write_summary_csv(const std::string& path, const std::vector<RunSummary>& rows);
std::vector<RunSummary> read_summary_csv(const std::string& path);

}  // namespace lidarfuse::eval
