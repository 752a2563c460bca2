#pragma once

#include "lidarfuse/geom.hpp"

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace lidarfuse::sim {

// ---------------------------------------------------------------------------
// Spherical pendulum (pole-head sway model)

struct PendulumState {
  double theta = 0.0;      // polar angle from the vertical
  double phi = 0.0;        // azimuth
  double theta_dot = 0.0;  // rad/s
  double phi_dot = 0.0;    // rad/s
};

struct PendulumDerivative {
  double theta_dot, phi_dot, theta_ddot, phi_ddot;
};

/// Right-hand sides
///   theta'' = phi'^2 sin(theta) cos(theta) - (g/r) sin(theta)
///   phi''   = -2 phi' theta' cos(theta)/sin(theta)
/// |theta| is clamped to 1e-6 to keep the azimuth equation defined.
PendulumDerivative pendulum_derivative(const PendulumState& s, double g, double r,
                                       bool* clamped = nullptr);

/// Fixed-step RK4 trajectory sampled every dt (substeps internal RK4 steps
/// per sample). Returns steps+1 states including the initial one.
std::vector<PendulumState> integrate_pendulum(const PendulumState& s0, double g, double r,
                                              double dt, int steps, int substeps = 25,
                                              int* clamp_events = nullptr);

/// Initial values drawn uniformly from the Table-II-style ranges
/// (phi in [0, 0.7pi], phi' in [-0.2pi, 0.2pi], theta in [-0.02pi, 0.02pi],
/// theta' in [-0.01pi, 0.01pi]), rejecting draws whose trajectory would
/// graze the theta=0 coordinate singularity of the azimuth equation.
PendulumState draw_pendulum_init(std::mt19937_64& rng);

/// Offset of the rod tip relative to its rest position (tip straight above
/// the anchor): translation of the tip, rotation tilting the rod by theta
/// about the horizontal axis perpendicular to phi.
RigidTransform pendulum_to_pose_offset(const PendulumState& s, double r);

/// Analytic invariants of the ODE, used to validate integration.
double pendulum_energy(const PendulumState& s, double g, double r);
double pendulum_angular_momentum(const PendulumState& s);

// ---------------------------------------------------------------------------
// Scene

struct Box {
  RigidTransform pose;  // box frame -> world
  Vec3 half_extents = Vec3::Ones();
};

struct VerticalCylinder {
  Vec3 base = Vec3::Zero();
  double radius = 0.3;
  double height = 3.0;
};

struct Sphere {
  Vec3 center = Vec3::Zero();
  double radius = 1.0;
};

struct GroundRect {
  double z = 0.0;
  Vec3 center = Vec3::Zero();
  double half_x = 100.0, half_y = 100.0;
};

enum class ActorClass { car, truck, motorcycle, bicycle, pedestrian };

struct Actor {
  ActorClass cls = ActorClass::car;
  Vec3 half_extents = Vec3(2.25, 0.9, 0.75);
  std::vector<Vec3> waypoints;  // ground-level piecewise-linear path
  double speed = 13.0;          // m/s along the path
  double spawn_time = 0.0;

  /// Oriented box pose at time t; nullopt before spawn or after the path end.
  std::optional<RigidTransform> pose_at(double t) const;
};

struct LidarModel {
  int layers = 64;
  double vertical_fov_deg = 33.2;
  int horizontal_steps = 1024;
  double max_range = 120.0;
  double min_range = 0.5;

  double angular_resolution() const;  // max of horizontal/vertical step, radians
};

enum class Layout { curve, straight, intersection, custom };

struct ScenarioConfig {
  std::string name = "scenario";
  Layout layout = Layout::straight;
  int n_sensors = 4;
  double sensor_height = 6.0;
  double tilt_deg = 17.0;
  double pendulum_radius = 6.0;
  bool pendulum_enabled = true;
  double noise_sigma = 0.1 / 3.0;  // 3 sigma = 10 cm
  double sample_rate = 20.0;
  double duration = 30.0;
  LidarModel lidar;
  int n_actors = 12;
  double actor_spawn_start = 1.0;  // road clear while the rig initializes
  std::uint64_t seed = 0;
};

struct Scene {
  std::optional<GroundRect> ground;
  std::vector<Box> buildings;
  std::vector<VerticalCylinder> cylinders;
  std::vector<Sphere> spheres;
  std::vector<Actor> actors;
  std::vector<RigidTransform> sensor_mounts;  // nominal sensor frame -> world
  std::vector<Vec3> pendulum_bases;           // pole anchors (one per sensor)
};

/// Deterministic procedural scene for the given layout and seed.
Scene generate_scene(const ScenarioConfig& cfg);

// ---------------------------------------------------------------------------
// Ray casting

/// BVH over the scene's primitives with the actors posed at a fixed time.
class RayCaster {
 public:
  RayCaster(const Scene& scene, double time);
  std::optional<double> cast(const Vec3& origin, const Vec3& dir, double min_range,
                             double max_range) const;

 private:
  struct Prim;
  struct Node;
  std::vector<Prim> prims_;
  std::vector<Node> nodes_;
  std::optional<GroundRect> ground_;
  int build_node(std::vector<int>& order, int begin, int end);
  std::vector<int> order_;
};

/// One full sweep: layers x horizontal_steps rays, nearest hit per ray,
/// range noise N(0, sigma), misses omitted. Points are in the sensor frame.
PointCloud simulate_lidar(const Scene& scene, double time, const RigidTransform& sensor_pose,
                          const LidarModel& model, double noise_sigma, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Dataset generation

struct GroundTruthRecord {
  int time_step = 0;
  int sensor_id = 0;
  Vec3 position = Vec3::Zero();
  UnitQuaternion orientation;
};

struct ScenarioRunSummary {
  std::string manifest_path;
  int n_frames = 0;
  int n_sensors = 0;
  int pendulum_clamp_events = 0;
};

/// Simulates the whole scenario and writes the dataset (frame files,
/// manifest, ground-truth CSV) under out_dir.
ScenarioRunSummary run_scenario(const ScenarioConfig& cfg, const std::string& out_dir);

Layout layout_from_string(const std::string& s);
std::string layout_to_string(Layout l);

}  // namespace lidarfuse::sim
