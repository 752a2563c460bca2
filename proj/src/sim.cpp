#include "lidarfuse/sim.hpp"

#include "lidarfuse/io.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <stdexcept>

namespace lidarfuse::sim {

// ---------------------------------------------------------------------------
// Pendulum

PendulumDerivative pendulum_derivative(const PendulumState& s, double g, double r,
                                       bool* clamped) {
  double theta = s.theta;
  if (std::abs(theta) < 1e-6) {
    theta = theta < 0.0 ? -1e-6 : 1e-6;
    if (clamped) *clamped = true;
  }
  const double st = std::sin(theta);
  const double ct = std::cos(theta);
  PendulumDerivative d;
  d.theta_dot = s.theta_dot;
  d.phi_dot = s.phi_dot;
  d.theta_ddot = s.phi_dot * s.phi_dot * st * ct - (g / r) * st;
  d.phi_ddot = -2.0 * s.phi_dot * s.theta_dot * ct / st;
  return d;
}

namespace {

PendulumState state_add(const PendulumState& s, const PendulumDerivative& d, double h) {
  return {s.theta + h * d.theta_dot, s.phi + h * d.phi_dot, s.theta_dot + h * d.theta_ddot,
          s.phi_dot + h * d.phi_ddot};
}

PendulumState rk4_step(const PendulumState& s, double g, double r, double h, bool* clamped) {
  const PendulumDerivative k1 = pendulum_derivative(s, g, r, clamped);
  const PendulumDerivative k2 = pendulum_derivative(state_add(s, k1, h / 2.0), g, r, clamped);
  const PendulumDerivative k3 = pendulum_derivative(state_add(s, k2, h / 2.0), g, r, clamped);
  const PendulumDerivative k4 = pendulum_derivative(state_add(s, k3, h), g, r, clamped);
  PendulumState out;
  out.theta = s.theta + h / 6.0 * (k1.theta_dot + 2.0 * k2.theta_dot + 2.0 * k3.theta_dot +
                                   k4.theta_dot);
  out.phi =
      s.phi + h / 6.0 * (k1.phi_dot + 2.0 * k2.phi_dot + 2.0 * k3.phi_dot + k4.phi_dot);
  out.theta_dot = s.theta_dot + h / 6.0 * (k1.theta_ddot + 2.0 * k2.theta_ddot +
                                           2.0 * k3.theta_ddot + k4.theta_ddot);
  out.phi_dot =
      s.phi_dot + h / 6.0 * (k1.phi_ddot + 2.0 * k2.phi_ddot + 2.0 * k3.phi_ddot + k4.phi_ddot);
  return out;
}

}  // namespace

std::vector<PendulumState> integrate_pendulum(const PendulumState& s0, double g, double r,
                                              double dt, int steps, int substeps,
                                              int* clamp_events) {
  if (dt <= 0.0) throw std::invalid_argument("integrate_pendulum: dt must be > 0");
  std::vector<PendulumState> traj;
  traj.reserve(steps + 1);
  traj.push_back(s0);
  PendulumState s = s0;
  const double h = dt / std::max(substeps, 1);
  for (int i = 0; i < steps; ++i) {
    for (int k = 0; k < std::max(substeps, 1); ++k) {
      bool clamped = false;
      s = rk4_step(s, g, r, h, &clamped);
      if (clamped && clamp_events) ++(*clamp_events);
    }
    traj.push_back(s);
  }
  return traj;
}

RigidTransform pendulum_to_pose_offset(const PendulumState& s, double r) {
  const double st = std::sin(s.theta), ct = std::cos(s.theta);
  const double cp = std::cos(s.phi), sp = std::sin(s.phi);
  RigidTransform t;
  t.translation = Vec3(r * st * cp, r * st * sp, r * (ct - 1.0));
  const Vec3 axis(-sp, cp, 0.0);
  t.rotation = Eigen::AngleAxisd(s.theta, axis).toRotationMatrix();
  return t;
}

double pendulum_energy(const PendulumState& s, double g, double r) {
  const double st = std::sin(s.theta);
  return 0.5 * (s.theta_dot * s.theta_dot + s.phi_dot * s.phi_dot * st * st) -
         (g / r) * std::cos(s.theta);
}

double pendulum_angular_momentum(const PendulumState& s) {
  const double st = std::sin(s.theta);
  return s.phi_dot * st * st;
}

PendulumState draw_pendulum_init(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (;;) {
    PendulumState s;
    s.phi = 0.7 * M_PI * u(rng);
    s.phi_dot = (-0.2 + 0.4 * u(rng)) * M_PI;
    s.theta = (-0.02 + 0.04 * u(rng)) * M_PI;
    s.theta_dot = (-0.01 + 0.02 * u(rng)) * M_PI;
    // Small-angle turning-point estimate: the trajectory must stay clear of
    // theta = 0 where the azimuth rate diverges.
    const double w2 = 9.81 / 6.0;
    const double lz = s.phi_dot * s.theta * s.theta;  // sin(theta) ~ theta
    const double energy = 0.5 * s.theta_dot * s.theta_dot +
                          0.5 * lz * lz / (s.theta * s.theta) +
                          0.5 * w2 * s.theta * s.theta;
    const double disc = energy * energy - w2 * lz * lz;
    const double theta_min2 = (energy - std::sqrt(std::max(disc, 0.0))) / w2;
    if (theta_min2 >= 1e-4) return s;  // theta stays above ~0.01 rad
  }
}

// ---------------------------------------------------------------------------
// Actors

std::optional<RigidTransform> Actor::pose_at(double t) const {
  if (t < spawn_time || waypoints.size() < 2 || speed <= 0.0) return std::nullopt;
  double remaining = speed * (t - spawn_time);
  for (std::size_t i = 0; i + 1 < waypoints.size(); ++i) {
    const Vec3 seg = waypoints[i + 1] - waypoints[i];
    const double len = seg.norm();
    if (remaining <= len) {
      RigidTransform pose;
      const Vec3 dir = seg / len;
      pose.rotation = rot_z(std::atan2(dir.y(), dir.x()));
      pose.translation = waypoints[i] + remaining * dir + Vec3(0, 0, half_extents.z());
      return pose;
    }
    remaining -= len;
  }
  return std::nullopt;  // left the scene
}

double LidarModel::angular_resolution() const {
  const double h = 2.0 * M_PI / horizontal_steps;
  const double v = vertical_fov_deg * M_PI / 180.0 / std::max(layers - 1, 1);
  return std::max(h, v);
}

// ---------------------------------------------------------------------------
// Scene generation

namespace {

struct Lane {
  std::vector<Vec3> pts;
  bool sidewalk = false;
};

Vec3 actor_half_extents(ActorClass c) {
  switch (c) {
    case ActorClass::car: return {2.25, 0.9, 0.75};
    case ActorClass::truck: return {5.0, 1.25, 1.75};
    case ActorClass::motorcycle: return {1.0, 0.4, 0.7};
    case ActorClass::bicycle: return {0.9, 0.3, 0.6};
    case ActorClass::pedestrian: return {0.25, 0.25, 0.9};
  }
  return {2.25, 0.9, 0.75};
}

std::pair<double, double> actor_speed_range(ActorClass c) {
  switch (c) {
    case ActorClass::car: return {11.0, 15.0};
    case ActorClass::truck: return {9.0, 12.0};
    case ActorClass::motorcycle: return {13.0, 17.0};
    case ActorClass::bicycle: return {4.0, 6.0};
    case ActorClass::pedestrian: return {1.1, 1.7};
  }
  return {11.0, 15.0};
}

RigidTransform sensor_mount(const Vec3& position, const Vec3& look_at, double tilt_deg) {
  const Vec3 d = look_at - position;
  const double yaw = std::atan2(d.y(), d.x());
  RigidTransform t;
  t.rotation = rot_z(yaw) * rot_y(tilt_deg * M_PI / 180.0);
  t.translation = position;
  return t;
}

void add_tree(Scene& scene, std::mt19937_64& rng, double x, double y) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  VerticalCylinder trunk;
  trunk.base = Vec3(x, y, 0.0);
  trunk.radius = 0.15 + 0.2 * u(rng);
  trunk.height = 2.5 + 1.5 * u(rng);
  Sphere crown;
  crown.radius = 1.0 + 1.2 * u(rng);
  crown.center = Vec3(x, y, trunk.height + 0.6 * crown.radius);
  scene.cylinders.push_back(trunk);
  scene.spheres.push_back(crown);
}

void add_building(Scene& scene, std::mt19937_64& rng, double x, double y, double min_fp,
                  double max_fp) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Box b;
  const double hx = (min_fp + (max_fp - min_fp) * u(rng)) / 2.0;
  const double hy = (min_fp + (max_fp - min_fp) * u(rng)) / 2.0;
  const double h = 5.0 + 13.0 * u(rng);
  b.half_extents = Vec3(hx, hy, h / 2.0);
  b.pose.rotation = rot_z((u(rng) - 0.5) * 0.6);
  b.pose.translation = Vec3(x, y, h / 2.0);
  scene.buildings.push_back(b);
}

void add_furniture(Scene& scene, std::mt19937_64& rng, double x, double y) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Box b;
  b.half_extents = Vec3(0.3 + 0.7 * u(rng), 0.3 + 0.7 * u(rng), 0.5 + 0.8 * u(rng));
  b.pose.rotation = rot_z(u(rng) * M_PI);
  b.pose.translation = Vec3(x, y, b.half_extents.z());
  scene.buildings.push_back(b);
}

std::vector<Lane> straight_lanes() {
  std::vector<Lane> lanes;
  for (double y : {1.75, 5.25, 8.75}) {
    lanes.push_back({{{-85.0, y, 0.0}, {85.0, y, 0.0}}, false});
  }
  for (double y : {-1.75, -5.25, -8.75}) {
    lanes.push_back({{{85.0, y, 0.0}, {-85.0, y, 0.0}}, false});
  }
  lanes.push_back({{{-85.0, 11.5, 0.0}, {85.0, 11.5, 0.0}}, true});
  lanes.push_back({{{85.0, -11.5, 0.0}, {-85.0, -11.5, 0.0}}, true});
  return lanes;
}

std::vector<Lane> arc_lanes(double a0_deg, double a1_deg) {
  std::vector<Lane> lanes;
  auto arc = [&](double radius, bool reverse) {
    Lane lane;
    for (int k = 0; k <= 24; ++k) {
      const double a = (a0_deg + (a1_deg - a0_deg) * k / 24.0) * M_PI / 180.0;
      lane.pts.emplace_back(radius * std::cos(a), radius * std::sin(a), 0.0);
    }
    if (reverse) std::reverse(lane.pts.begin(), lane.pts.end());
    return lane;
  };
  for (double r : {51.75, 55.25, 58.75}) lanes.push_back(arc(r, false));
  for (double r : {61.25, 64.75, 68.25}) lanes.push_back(arc(r, true));
  Lane sw1 = arc(48.0, false);
  sw1.sidewalk = true;
  Lane sw2 = arc(72.0, true);
  sw2.sidewalk = true;
  lanes.push_back(sw1);
  lanes.push_back(sw2);
  return lanes;
}

std::vector<Lane> intersection_lanes() {
  std::vector<Lane> lanes;
  for (double c : {1.75, 5.25, 8.75}) {
    lanes.push_back({{{-85.0, c, 0.0}, {85.0, c, 0.0}}, false});
    lanes.push_back({{{85.0, -c, 0.0}, {-85.0, -c, 0.0}}, false});
    lanes.push_back({{{c, 85.0, 0.0}, {c, -85.0, 0.0}}, false});
    lanes.push_back({{{-c, -85.0, 0.0}, {-c, 85.0, 0.0}}, false});
  }
  lanes.push_back({{{-85.0, 11.5, 0.0}, {-13.0, 11.5, 0.0}}, true});
  lanes.push_back({{{13.0, -11.5, 0.0}, {85.0, -11.5, 0.0}}, true});
  return lanes;
}

void spawn_actors(Scene& scene, const ScenarioConfig& cfg, const std::vector<Lane>& lanes,
                  std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<int> road_lanes, walk_lanes;
  for (std::size_t i = 0; i < lanes.size(); ++i) {
    (lanes[i].sidewalk ? walk_lanes : road_lanes).push_back(static_cast<int>(i));
  }
  const double spawn_span = std::max(cfg.duration * 0.85 - cfg.actor_spawn_start, 0.0);
  for (int a = 0; a < cfg.n_actors; ++a) {
    const double cls_draw = u(rng);
    ActorClass cls;
    if (cls_draw < 0.45) {
      cls = ActorClass::car;
    } else if (cls_draw < 0.65) {
      cls = ActorClass::truck;
    } else if (cls_draw < 0.75) {
      cls = ActorClass::motorcycle;
    } else if (cls_draw < 0.85) {
      cls = ActorClass::bicycle;
    } else {
      cls = ActorClass::pedestrian;
    }
    Actor actor;
    actor.cls = cls;
    actor.half_extents = actor_half_extents(cls);
    const auto [lo, hi] = actor_speed_range(cls);
    actor.speed = lo + (hi - lo) * u(rng);
    actor.spawn_time = cfg.actor_spawn_start + spawn_span * u(rng);
    const bool walker = cls == ActorClass::pedestrian;
    const auto& pool = walker && !walk_lanes.empty() ? walk_lanes : road_lanes;
    if (pool.empty()) continue;
    const int lane = pool[static_cast<int>(u(rng) * pool.size()) % pool.size()];
    actor.waypoints = lanes[lane].pts;
    scene.actors.push_back(actor);
  }
}

}  // namespace

Scene generate_scene(const ScenarioConfig& cfg) {
  if (cfg.n_sensors < 2 || cfg.n_sensors > 4) {
    throw std::invalid_argument("generate_scene: n_sensors must be in [2, 4]");
  }
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Scene scene;
  std::vector<Lane> lanes;

  switch (cfg.layout) {
    case Layout::straight: {
      scene.ground = GroundRect{0.0, Vec3::Zero(), 110.0, 60.0};
      const double sensor_x[4] = {-45.0, -15.0, 15.0, 45.0};
      for (int i = 0; i < cfg.n_sensors; ++i) {
        const double y = (i % 2 == 0) ? 13.0 : -13.0;  // zigzag
        const Vec3 pos(sensor_x[i], y, cfg.sensor_height);
        scene.sensor_mounts.push_back(sensor_mount(pos, Vec3(sensor_x[i], 0.0, 0.0), cfg.tilt_deg));
        scene.pendulum_bases.push_back(pos - Vec3(0, 0, cfg.pendulum_radius));
      }
      for (int side = -1; side <= 1; side += 2) {
        for (double x = -70.0; x <= 70.0; x += 18.0 + 6.0 * u(rng)) {
          add_building(scene, rng, x + 4.0 * (u(rng) - 0.5), side * (24.0 + 10.0 * u(rng)), 8.0,
                       15.0);
        }
        for (double x = -78.0; x <= 78.0; x += 9.0 + 8.0 * u(rng)) {
          add_tree(scene, rng, x, side * (14.5 + 2.5 * u(rng)));
        }
        for (int f = 0; f < 4; ++f) {
          add_furniture(scene, rng, -60.0 + 120.0 * u(rng), side * (11.6 + 1.0 * u(rng)));
        }
      }
      lanes = straight_lanes();
      break;
    }
    case Layout::curve: {
      scene.ground = GroundRect{0.0, Vec3(0.0, 55.0, 0.0), 90.0, 60.0};
      const double angles[4] = {62.0, 80.0, 100.0, 118.0};
      for (int i = 0; i < cfg.n_sensors; ++i) {
        const double radius = (i % 2 == 0) ? 45.0 : 75.0;  // alternating road sides
        const double a = angles[i] * M_PI / 180.0;
        const Vec3 pos(radius * std::cos(a), radius * std::sin(a), cfg.sensor_height);
        const Vec3 look(60.0 * std::cos(a), 60.0 * std::sin(a), 0.0);
        scene.sensor_mounts.push_back(sensor_mount(pos, look, cfg.tilt_deg));
        scene.pendulum_bases.push_back(pos - Vec3(0, 0, cfg.pendulum_radius));
      }
      for (double a = 50.0; a <= 130.0; a += 11.0 + 5.0 * u(rng)) {
        const double ar = a * M_PI / 180.0;
        add_building(scene, rng, 88.0 * std::cos(ar), 88.0 * std::sin(ar), 8.0, 16.0);
        if (u(rng) < 0.7) {
          add_building(scene, rng, 32.0 * std::cos(ar) + 6.0 * (u(rng) - 0.5),
                       32.0 * std::sin(ar) + 6.0 * (u(rng) - 0.5), 6.0, 12.0);
        }
      }
      for (double a = 48.0; a <= 132.0; a += 6.0 + 4.0 * u(rng)) {
        const double ar = a * M_PI / 180.0;
        const double radius = u(rng) < 0.5 ? 46.0 : 74.0;
        add_tree(scene, rng, radius * std::cos(ar), radius * std::sin(ar));
      }
      lanes = arc_lanes(45.0, 135.0);
      break;
    }
    case Layout::intersection: {
      scene.ground = GroundRect{0.0, Vec3::Zero(), 95.0, 95.0};
      const double corner[4][2] = {{14.0, 14.0}, {-14.0, 14.0}, {-14.0, -14.0}, {14.0, -14.0}};
      for (int i = 0; i < cfg.n_sensors; ++i) {
        const Vec3 pos(corner[i][0], corner[i][1], cfg.sensor_height);
        scene.sensor_mounts.push_back(sensor_mount(pos, Vec3::Zero(), cfg.tilt_deg));
        scene.pendulum_bases.push_back(pos - Vec3(0, 0, cfg.pendulum_radius));
      }
      // Corner buildings obstruct the direct sight line between sensors.
      for (const auto& c : corner) {
        add_building(scene, rng, c[0] * 2.4, c[1] * 2.4, 12.0, 20.0);
        add_building(scene, rng, c[0] * 4.5, c[1] * 2.2, 8.0, 14.0);
        add_building(scene, rng, c[0] * 2.2, c[1] * 4.5, 8.0, 14.0);
      }
      for (const auto& c : corner) {
        VerticalCylinder light;
        light.base = Vec3(c[0] * 0.85, c[1] * 0.85, 0.0);
        light.radius = 0.12;
        light.height = 5.0;
        scene.cylinders.push_back(light);
      }
      for (int k = 0; k < 14; ++k) {
        const double along = 20.0 + 60.0 * u(rng);
        const double off = 13.5 + 4.0 * u(rng);
        const int quadrant = k % 4;
        const double sx = (quadrant == 0 || quadrant == 3) ? 1.0 : -1.0;
        const double sy = (quadrant < 2) ? 1.0 : -1.0;
        if (u(rng) < 0.5) {
          add_tree(scene, rng, sx * along, sy * off);
        } else {
          add_tree(scene, rng, sx * off, sy * along);
        }
      }
      lanes = intersection_lanes();
      break;
    }
    case Layout::custom: {
      // Compact desk-scale scene, handy for fast experiments.
      scene.ground = GroundRect{0.0, Vec3::Zero(), 45.0, 45.0};
      const double sensor_x[4] = {-15.0, 15.0, -15.0, 15.0};
      const double sensor_y[4] = {-12.0, -12.0, 12.0, 12.0};
      for (int i = 0; i < cfg.n_sensors; ++i) {
        const Vec3 pos(sensor_x[i], sensor_y[i], cfg.sensor_height);
        scene.sensor_mounts.push_back(sensor_mount(pos, Vec3::Zero(), cfg.tilt_deg));
        scene.pendulum_bases.push_back(pos - Vec3(0, 0, cfg.pendulum_radius));
      }
      for (int k = 0; k < 7; ++k) {
        const double a = 2.0 * M_PI * k / 7.0;
        add_building(scene, rng, 30.0 * std::cos(a), 30.0 * std::sin(a), 5.0, 10.0);
      }
      for (int k = 0; k < 8; ++k) {
        add_tree(scene, rng, -20.0 + 40.0 * u(rng), -20.0 + 40.0 * u(rng));
      }
      for (int k = 0; k < 5; ++k) {
        add_furniture(scene, rng, -10.0 + 20.0 * u(rng), -10.0 + 20.0 * u(rng));
      }
      lanes.push_back({{{-40.0, 0.0, 0.0}, {40.0, 0.0, 0.0}}, false});
      lanes.push_back({{{40.0, -3.5, 0.0}, {-40.0, -3.5, 0.0}}, false});
      break;
    }
  }

  spawn_actors(scene, cfg, lanes, rng);
  return scene;
}

// ---------------------------------------------------------------------------
// Ray casting

struct RayCaster::Prim {
  int type = 0;  // 0 box, 1 cylinder, 2 sphere
  Box box;
  VerticalCylinder cyl;
  Sphere sph;
  Vec3 bb_min = Vec3::Zero(), bb_max = Vec3::Zero();
};

struct RayCaster::Node {
  Vec3 bb_min = Vec3::Zero(), bb_max = Vec3::Zero();
  int left = -1, right = -1;
  int begin = 0, end = 0;
};

namespace {

void box_aabb(const Box& b, Vec3& lo, Vec3& hi) {
  const Mat3 r_abs = b.pose.rotation.cwiseAbs();
  const Vec3 ext = r_abs * b.half_extents;
  lo = b.pose.translation - ext;
  hi = b.pose.translation + ext;
}

bool ray_aabb(const Vec3& o, const Vec3& inv_d, const Vec3& lo, const Vec3& hi, double t_max) {
  double t0 = 0.0, t1 = t_max;
  for (int i = 0; i < 3; ++i) {
    const double ta = (lo[i] - o[i]) * inv_d[i];
    const double tb = (hi[i] - o[i]) * inv_d[i];
    t0 = std::max(t0, std::min(ta, tb));
    t1 = std::min(t1, std::max(ta, tb));
    if (t0 > t1) return false;
  }
  return true;
}

bool ray_box(const Vec3& o, const Vec3& d, const Box& b, double& t_hit) {
  const Vec3 ol = b.pose.rotation.transpose() * (o - b.pose.translation);
  const Vec3 dl = b.pose.rotation.transpose() * d;
  double t0 = 0.0, t1 = t_hit;
  for (int i = 0; i < 3; ++i) {
    if (std::abs(dl[i]) < 1e-12) {
      if (std::abs(ol[i]) > b.half_extents[i]) return false;
      continue;
    }
    const double inv = 1.0 / dl[i];
    double ta = (-b.half_extents[i] - ol[i]) * inv;
    double tb = (b.half_extents[i] - ol[i]) * inv;
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 > t1) return false;
  }
  if (t0 <= 0.0 || t0 >= t_hit) return false;
  t_hit = t0;
  return true;
}

bool ray_sphere(const Vec3& o, const Vec3& d, const Sphere& s, double& t_hit) {
  const Vec3 oc = o - s.center;
  const double b = oc.dot(d);
  const double c = oc.squaredNorm() - s.radius * s.radius;
  const double disc = b * b - c;
  if (disc < 0.0) return false;
  const double t = -b - std::sqrt(disc);
  if (t <= 0.0 || t >= t_hit) return false;
  t_hit = t;
  return true;
}

bool ray_cylinder(const Vec3& o, const Vec3& d, const VerticalCylinder& c, double& t_hit) {
  const double ox = o.x() - c.base.x(), oy = o.y() - c.base.y();
  const double a = d.x() * d.x() + d.y() * d.y();
  if (a < 1e-12) return false;
  const double b = ox * d.x() + oy * d.y();
  const double q = ox * ox + oy * oy - c.radius * c.radius;
  const double disc = b * b - a * q;
  if (disc < 0.0) return false;
  const double t = (-b - std::sqrt(disc)) / a;
  if (t <= 0.0 || t >= t_hit) return false;
  const double z = o.z() + t * d.z();
  if (z < c.base.z() || z > c.base.z() + c.height) return false;
  t_hit = t;
  return true;
}

}  // namespace

RayCaster::RayCaster(const Scene& scene, double time) {
  ground_ = scene.ground;
  auto push_box = [&](const Box& b) {
    Prim p;
    p.type = 0;
    p.box = b;
    box_aabb(b, p.bb_min, p.bb_max);
    prims_.push_back(p);
  };
  for (const auto& b : scene.buildings) push_box(b);
  for (const auto& c : scene.cylinders) {
    Prim p;
    p.type = 1;
    p.cyl = c;
    p.bb_min = c.base - Vec3(c.radius, c.radius, 0.0);
    p.bb_max = c.base + Vec3(c.radius, c.radius, c.height);
    prims_.push_back(p);
  }
  for (const auto& s : scene.spheres) {
    Prim p;
    p.type = 2;
    p.sph = s;
    p.bb_min = s.center - Vec3::Constant(s.radius);
    p.bb_max = s.center + Vec3::Constant(s.radius);
    prims_.push_back(p);
  }
  for (const auto& a : scene.actors) {
    const auto pose = a.pose_at(time);
    if (!pose) continue;
    Box b;
    b.pose = *pose;
    b.half_extents = a.half_extents;
    push_box(b);
  }
  order_.resize(prims_.size());
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = static_cast<int>(i);
  if (!prims_.empty()) build_node(order_, 0, static_cast<int>(prims_.size()));
}

int RayCaster::build_node(std::vector<int>& order, int begin, int end) {
  const int node_id = static_cast<int>(nodes_.size());
  nodes_.emplace_back();
  Vec3 lo = prims_[order[begin]].bb_min, hi = prims_[order[begin]].bb_max;
  for (int i = begin + 1; i < end; ++i) {
    lo = lo.cwiseMin(prims_[order[i]].bb_min);
    hi = hi.cwiseMax(prims_[order[i]].bb_max);
  }
  nodes_[node_id].bb_min = lo;
  nodes_[node_id].bb_max = hi;
  if (end - begin <= 2) {
    nodes_[node_id].begin = begin;
    nodes_[node_id].end = end;
    return node_id;
  }
  int dim = 0;
  (hi - lo).maxCoeff(&dim);
  const int mid = (begin + end) / 2;
  std::nth_element(order.begin() + begin, order.begin() + mid, order.begin() + end,
                   [&](int a, int b) {
                     return prims_[a].bb_min[dim] + prims_[a].bb_max[dim] <
                            prims_[b].bb_min[dim] + prims_[b].bb_max[dim];
                   });
  const int left = build_node(order, begin, mid);
  const int right = build_node(order, mid, end);
  nodes_[node_id].left = left;
  nodes_[node_id].right = right;
  return node_id;
}

std::optional<double> RayCaster::cast(const Vec3& origin, const Vec3& dir, double min_range,
                                      double max_range) const {
  double t_hit = max_range;
  bool hit = false;

  if (ground_ && std::abs(dir.z()) > 1e-12) {
    const double t = (ground_->z - origin.z()) / dir.z();
    if (t > 0.0 && t < t_hit) {
      const Vec3 p = origin + t * dir;
      if (std::abs(p.x() - ground_->center.x()) <= ground_->half_x &&
          std::abs(p.y() - ground_->center.y()) <= ground_->half_y) {
        t_hit = t;
        hit = true;
      }
    }
  }

  if (!nodes_.empty()) {
    const Vec3 inv_d(1.0 / (std::abs(dir.x()) > 1e-300 ? dir.x() : 1e-300),
                     1.0 / (std::abs(dir.y()) > 1e-300 ? dir.y() : 1e-300),
                     1.0 / (std::abs(dir.z()) > 1e-300 ? dir.z() : 1e-300));
    int stack[64];
    int top = 0;
    stack[top++] = 0;
    while (top > 0) {
      const Node& n = nodes_[stack[--top]];
      if (!ray_aabb(origin, inv_d, n.bb_min, n.bb_max, t_hit)) continue;
      if (n.left < 0) {
        for (int i = n.begin; i < n.end; ++i) {
          const Prim& p = prims_[order_[i]];
          bool h = false;
          if (p.type == 0) {
            h = ray_box(origin, dir, p.box, t_hit);
          } else if (p.type == 1) {
            h = ray_cylinder(origin, dir, p.cyl, t_hit);
          } else {
            h = ray_sphere(origin, dir, p.sph, t_hit);
          }
          hit = hit || h;
        }
      } else {
        stack[top++] = n.left;
        stack[top++] = n.right;
      }
    }
  }

  if (!hit || t_hit < min_range) return std::nullopt;
  return t_hit;
}

PointCloud simulate_lidar(const Scene& scene, double time, const RigidTransform& sensor_pose,
                          const LidarModel& model, double noise_sigma, std::uint64_t seed) {
  const RayCaster caster(scene, time);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, noise_sigma);

  PointCloud cloud;
  cloud.timestamp = time;
  cloud.points.reserve(static_cast<std::size_t>(model.layers) * model.horizontal_steps / 2);
  const double vfov = model.vertical_fov_deg * M_PI / 180.0;
  for (int layer = 0; layer < model.layers; ++layer) {
    const double elevation =
        model.layers > 1 ? -vfov / 2.0 + vfov * layer / (model.layers - 1) : 0.0;
    const double ce = std::cos(elevation), se = std::sin(elevation);
    for (int step = 0; step < model.horizontal_steps; ++step) {
      const double azimuth = 2.0 * M_PI * step / model.horizontal_steps;
      const Vec3 dir_sensor(ce * std::cos(azimuth), ce * std::sin(azimuth), se);
      const Vec3 dir_world = sensor_pose.rotation * dir_sensor;
      const auto range = caster.cast(sensor_pose.translation, dir_world, model.min_range,
                                     model.max_range);
      if (!range) continue;
      const double noisy = noise_sigma > 0.0 ? *range + noise(rng) : *range;
      cloud.points.push_back(dir_sensor * noisy);
    }
  }
  return cloud;
}

// ---------------------------------------------------------------------------
// Dataset generation

ScenarioRunSummary run_scenario(const ScenarioConfig& cfg, const std::string& out_dir) {
  namespace fs = std::filesystem;
  const Scene scene = generate_scene(cfg);
  fs::create_directories(fs::path(out_dir) / "frames");

  const int n_frames = static_cast<int>(std::llround(cfg.duration * cfg.sample_rate));
  const double period = 1.0 / cfg.sample_rate;
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> u(0.0, 1.0);

  // Per-sensor timestamp jitter (constant per stream) and pendulum initial
  // values drawn from the Table II ranges.
  std::vector<double> jitter(cfg.n_sensors);
  std::vector<PendulumState> pend(cfg.n_sensors);
  for (int i = 0; i < cfg.n_sensors; ++i) {
    jitter[i] = (u(rng) - 0.5) / cfg.sample_rate;  // within +-(2 SR)^-1
    pend[i] = draw_pendulum_init(rng);
  }

  FrameManifest manifest;
  manifest.dataset_id = cfg.name;
  manifest.n_sensors = cfg.n_sensors;
  manifest.sample_rate = cfg.sample_rate;
  manifest.angular_resolution_deg = cfg.lidar.angular_resolution() * 180.0 / M_PI;
  manifest.gt_path = "gt.csv";
  manifest.streams.resize(cfg.n_sensors);

  std::vector<PoseRecord> gt;
  gt.reserve(static_cast<std::size_t>(n_frames) * cfg.n_sensors);
  int clamp_events = 0;
  const double g = 9.81;

  std::vector<PendulumState> state = pend;
  std::vector<double> state_time(cfg.n_sensors);
  for (int i = 0; i < cfg.n_sensors; ++i) state_time[i] = 0.0;

  for (int n = 0; n < n_frames; ++n) {
    for (int i = 0; i < cfg.n_sensors; ++i) {
      const double t = n * period + jitter[i];
      RigidTransform pose = scene.sensor_mounts[i];
      if (cfg.pendulum_enabled) {
        // advance the pendulum from its last sample time to t
        const double span = t - state_time[i];
        if (span > 0.0) {
          const int steps = std::max(1, static_cast<int>(std::ceil(span / (period / 25.0))));
          const auto traj = integrate_pendulum(state[i], g, cfg.pendulum_radius, span / steps,
                                               steps, 1, &clamp_events);
          state[i] = traj.back();
        }
        state_time[i] = t;
        const RigidTransform offset = pendulum_to_pose_offset(state[i], cfg.pendulum_radius);
        pose.translation = scene.pendulum_bases[i] + Vec3(0, 0, cfg.pendulum_radius) +
                           offset.translation;
        pose.rotation = offset.rotation * scene.sensor_mounts[i].rotation;
      }

      PointCloud cloud = simulate_lidar(scene, t, pose, cfg.lidar, cfg.noise_sigma,
                                        cfg.seed + 1315423911ULL * (n * cfg.n_sensors + i + 1));
      cloud.sensor_id = i;
      cloud.timestamp = t;

      char name[64];
      std::snprintf(name, sizeof(name), "frames/s%d_f%06d.lfrm", i, n);
      write_frame_file((fs::path(out_dir) / name).string(), cloud);
      manifest.streams[i].sensor_id = i;
      manifest.streams[i].frames.push_back({name, t});

      PoseRecord rec;
      rec.time_step = n;
      rec.sensor_id = i;
      rec.pose = pose;
      gt.push_back(rec);
    }
  }

  write_pose_csv((fs::path(out_dir) / "gt.csv").string(), gt);
  const std::string manifest_path = (fs::path(out_dir) / "manifest.json").string();
  write_manifest(manifest_path, manifest);

  ScenarioRunSummary summary;
  summary.manifest_path = manifest_path;
  summary.n_frames = n_frames;
  summary.n_sensors = cfg.n_sensors;
  summary.pendulum_clamp_events = clamp_events;
  return summary;
}

Layout layout_from_string(const std::string& s) {
  if (s == "curve") return Layout::curve;
  if (s == "straight") return Layout::straight;
  if (s == "intersection") return Layout::intersection;
  if (s == "custom") return Layout::custom;
  throw std::invalid_argument("unknown layout: " + s);
}

std::string layout_to_string(Layout l) {
  switch (l) {
    case Layout::curve: return "curve";
    case Layout::straight: return "straight";
    case Layout::intersection: return "intersection";
    case Layout::custom: return "custom";
  }
  return "straight";
}

}  // namespace lidarfuse::sim
