#pragma once

#include "lidarfuse/geom.hpp"
#include "lidarfuse/icp.hpp"

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace lidarfuse {

struct NodeKey {
  int sensor_id = 0;
  int time_step = 0;
  auto operator<=>(const NodeKey&) const = default;
};

enum class EdgeCategory { prev_frame, first_frame, cross_sensor };

struct PoseEdge {
  NodeKey from;  // measurement maps points from this node's frame...
  NodeKey to;    // ...into this node's frame
  RigidTransform measurement;
  Mat6 information = Mat6::Identity();
  EdgeCategory category = EdgeCategory::cross_sensor;
};

struct OptimizeReport {
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Pose nodes over the sliding window plus the permanently retained t0
/// anchors. Node poses map sensor frame -> common frame (L0 at t0).
class SlidingWindow {
 public:
  SlidingWindow(int k_w, int n_sensors);

  int k_w() const { return k_w_; }
  int n_sensors() const { return n_sensors_; }
  int newest_step() const { return newest_step_; }

  const std::map<NodeKey, RigidTransform>& nodes() const { return nodes_; }
  const std::vector<PoseEdge>& edges() const { return edges_; }
  const std::set<NodeKey>& pinned() const { return pinned_; }

  void set_node(const NodeKey& key, const RigidTransform& pose);
  const RigidTransform& pose(const NodeKey& key) const;
  void pin(const NodeKey& key) { pinned_.insert(key); }
  void add_edge(const PoseEdge& e) { edges_.push_back(e); }

  /// Installs time step n: seeds new nodes from the previous optimized poses
  /// composed with the prev-frame measurements (identity fallback when the
  /// measurement is missing), adds the given edges, drops nodes older than
  /// the window start (t0 anchors excepted) together with their edges, and
  /// pins the anchors once t0 has left the window. Missing-measurement
  /// fallbacks are counted in fallback_events.
  void advance(int n, const std::vector<PoseEdge>& measurements);

  int fallback_events() const { return fallback_events_; }

 private:
  int k_w_;
  int n_sensors_;
  int newest_step_ = 0;
  int fallback_events_ = 0;
  std::map<NodeKey, RigidTransform> nodes_;
  std::vector<PoseEdge> edges_;
  std::set<NodeKey> pinned_;
};

/// Robustified nonlinear least squares over the window's non-pinned poses:
/// minimizes sum of huber(||log(M^-1 T_to^-1 T_from)||_Lambda) with
/// Levenberg-Marquardt damping. Cost is non-increasing over accepted steps.
OptimizeReport optimize(SlidingWindow& w, double huber_delta, int max_iterations);

/// Residual and its analytic Jacobians w.r.t. right-multiplied local
/// perturbations of the from/to poses (exposed for verification).
Vec6 edge_residual(const PoseEdge& e, const RigidTransform& from, const RigidTransform& to,
                   Mat6* jacobian_from = nullptr, Mat6* jacobian_to = nullptr);

/// Pose-graph optimization of the first frame: one node per sensor, one edge
/// per pairwise measurement T_{i,0}^{j,0} (key (i,j), i > j), L0 pinned at
/// identity. Throws std::runtime_error naming unreachable sensors when the
/// graph is disconnected.
std::vector<RigidTransform> build_initial_graph(
    const std::map<std::pair<int, int>, RigidTransform>& pairwise,
    const std::map<std::pair<int, int>, double>& edge_weights, int n_sensors);

/// Per Table-I edge measurement for one new time step. Clouds are the
/// static-masked, downsampled registration clouds; null entries mark sensor
/// dropouts. Non-converged G-ICP results are excluded.
struct EdgeMeasurementConfig {
  GicpParams gicp;
  int threads = 1;
  bool cross_sensor_due = false;  // n % (k_w - 1) == 0
};

struct FrameInputs {
  int time_step = 0;
  std::vector<const GicpCloud*> current;   // size n_sensors, nullable
  std::vector<const GicpCloud*> previous;  // clouds of step n-1
  std::vector<const GicpCloud*> first;     // static-masked first-frame clouds
  // T_{i,n-1}^{i,n-2}: initial value for prev-frame edges (Table I)
  std::vector<std::optional<RigidTransform>> prev_motion;
  // T_{i,n-1}^{j,n-1} for i > j, composed from optimized poses
  std::map<std::pair<int, int>, RigidTransform> cross_init;
  // T_{i,0}^{j,0}: fallback initial value for cross-sensor edges
  std::map<std::pair<int, int>, RigidTransform> cross_fallback;
};

std::vector<PoseEdge> measure_edges(const FrameInputs& in, const EdgeMeasurementConfig& cfg);

}  // namespace lidarfuse
