#pragma once

#include "lidarfuse/dynafilter.hpp"
#include "lidarfuse/features.hpp"
#include "lidarfuse/geom.hpp"
#include "lidarfuse/icp.hpp"
#include "lidarfuse/io.hpp"
#include "lidarfuse/posegraph.hpp"
#include "lidarfuse/preprocess.hpp"
#include "lidarfuse/sim.hpp"

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace lidarfuse {

struct RegistrationConfig {
  double voxel_size = 1.0;
  int window = 3;  // k_w
  bool dynamic_filter = true;
  int threads = 2;
  double huber_delta = 0.1;
  int optimize_max_iterations = 30;
  std::uint64_t seed = 0;

  // initial registration
  int outlier_k = 8;
  double outlier_stddev_mult = 1.0;
  double normal_radius = 1.0;
  OctreeFilterParams octree;
  CoarseParams coarse;

  // continuous G-ICP; max_correspondence_distance < 0 derives 2 * voxel_size
  GicpParams gicp{.max_correspondence_distance = -1.0};

  // dynamic-object filter
  double cone_half_angle_deg = -1.0;  // < 0: 1.5 x sensor angular resolution
  double range_threshold = 0.3;
  double model_cell = 0.5;
  double model_attenuation = 0.98;
  double model_insertion = 0.3;
  double model_weight_threshold = 0.5;

  bool process_partial_frames = true;
  bool export_fused = false;

  /// Resolves derived defaults (G-ICP radii, coarse thresholds) that follow
  /// from voxel/octree settings unless explicitly overridden.
  void finalize(double angular_resolution_deg = 0.0);
};

RegistrationConfig registration_config_from_json(const std::string& path);
sim::ScenarioConfig scenario_config_from_json(const std::string& path);

// ---------------------------------------------------------------------------
// Stream synchronization

struct FrameGroup {
  int time_step = 0;           // anchor sensor's stream index
  double anchor_timestamp = 0.0;
  std::vector<int> items;      // per sensor: index into its stream, -1 missing
};

struct SynchronizeStats {
  int groups = 0;
  int dropped_groups = 0;
  int missing_clouds = 0;
};

/// Greedy nearest-timestamp grouping anchored on sensor 0's clock; clouds
/// farther than 1/sample_rate from the anchor stay unused. Partial groups
/// are dropped unless allow_partial. Throws when a stream is empty.
std::vector<FrameGroup> synchronize(const std::vector<StreamInfo>& streams, double sample_rate,
                                    bool allow_partial, SynchronizeStats* stats = nullptr);

// ---------------------------------------------------------------------------
// Initial registration

struct InitialRegistrationResult {
  std::vector<RigidTransform> poses;  // T_{i,0}^{0,0} per sensor
  std::vector<PointCloud> downsampled;  // octree-filtered clouds with normals
  std::map<std::pair<int, int>, RigidTransform> pairwise;
  std::map<std::pair<int, int>, double> pair_weights;
  std::vector<std::pair<int, int>> failed_pairs;
  double runtime_s = 0.0;
};

/// Fig.-2 pipeline over the first frame: preprocessing, octree filtering,
/// pairwise coarse registration for all i > j, pose-graph optimization.
InitialRegistrationResult initial_registration(const std::vector<PointCloud>& clouds,
                                               const RegistrationConfig& cfg);

// ---------------------------------------------------------------------------
// Continuous session

struct StepResult {
  std::vector<RigidTransform> poses;  // per sensor, at this step
  FusedCloud fused;
  double runtime_ms = 0.0;
  int edges_measured = 0;
  double optimize_cost = 0.0;
};

class Session {
 public:
  /// Runs the initial registration on the first frame's clouds.
  Session(const std::vector<PointCloud>& first_frame, const RegistrationConfig& cfg);

  const std::vector<RigidTransform>& initial_poses() const { return initial_poses_; }
  double initial_runtime_s() const { return initial_runtime_s_; }
  const SlidingWindow& window() const { return window_; }
  const BackgroundModel& background_model(int sensor) const { return lanes_[sensor].model; }

  /// One continuous time step. Missing clouds engage the Table-I fallbacks.
  StepResult step(const std::vector<std::optional<PointCloud>>& clouds);

 private:
  struct Lane {
    SphericalGrid first_grid;
    PointCloud first_raw;
    PointCloud first_ds;  // voxel-downsampled first frame, unmasked
    std::shared_ptr<GicpCloud> first_gicp;
    int first_mask_at_build = 0;
    BackgroundModel model;
    RigidTransform pose_rel_first;  // T_{i,n-1}^{i,0}
    std::shared_ptr<GicpCloud> prev_gicp;
    std::optional<RigidTransform> prev_motion;  // measured T_{i,n-1}^{i,n-2}
  };

  RegistrationConfig cfg_;
  int n_sensors_ = 0;
  int step_count_ = 0;  // internal consecutive step counter
  double cone_half_angle_ = 0.0;
  std::vector<RigidTransform> initial_poses_;
  double initial_runtime_s_ = 0.0;
  SlidingWindow window_;
  std::vector<Lane> lanes_;
};

// ---------------------------------------------------------------------------
// Dataset-level runner

struct RegisterRunResult {
  std::string dataset_id;
  std::vector<PoseRecord> poses;
  std::vector<std::pair<int, double>> runtimes_ms;  // (time_step, ms)
  double init_runtime_s = 0.0;
  double mean_cont_runtime_ms = 0.0;
  SynchronizeStats sync;
};

/// Registers a recorded dataset end to end. When output_dir is non-empty,
/// writes poses.csv, runtimes.csv, run.json and (optionally) fused PLY
/// frames there.
RegisterRunResult register_dataset(const std::string& manifest_path,
                                   const RegistrationConfig& cfg,
                                   const std::string& output_dir);

}  // namespace lidarfuse
