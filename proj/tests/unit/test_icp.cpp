#include "lidarfuse/icp.hpp"

#include "lidarfuse/features.hpp"
#include "lidarfuse/preprocess.hpp"
#include "lidarfuse/se3.hpp"

#include "doctest.h"
#include "test_helpers.hpp"

#include <random>

using namespace lidarfuse;

namespace {

// jittered multi-plane scene: enough structure to pin all 6 DOF
PointCloud structured_scene(unsigned seed, int n = 900) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-10.0, 10.0);
  std::uniform_real_distribution<double> j(-0.03, 0.03);
  PointCloud c;
  for (int i = 0; i < n; ++i) {
    const double x = u(rng), y = u(rng);
    const int which = i % 3;
    if (which == 0) {
      c.points.emplace_back(x, y, j(rng));  // ground
    } else if (which == 1) {
      c.points.emplace_back(x, 10.0 + j(rng), 2.0 + 0.4 * u(rng));  // wall
    } else {
      c.points.emplace_back(10.0 + j(rng), y, 2.0 + 0.4 * u(rng));  // wall
    }
  }
  return c;
}

// classic point-to-point ICP: NN correspondences + Kabsch, run to a fixpoint
RigidTransform point_to_point_icp(const PointCloud& src, const PointCloud& tgt,
                                  const RigidTransform& init, double max_dist, int iters) {
  KdTree3 tree(tgt.points);
  RigidTransform t = init;
  for (int it = 0; it < iters; ++it) {
    std::vector<std::pair<Vec3, Vec3>> pairs;
    for (const auto& p : src.points) {
      const auto hit = tree.nearest(t.apply(p), max_dist);
      if (hit.index >= 0) pairs.emplace_back(p, tgt.points[hit.index]);
    }
    if (pairs.size() < 3) break;
    const RigidTransform next = estimate_transform_svd(pairs);
    if (test::max_abs_diff(next, t) < 1e-12) return next;
    t = next;
  }
  return t;
}

}  // namespace

TEST_CASE("gicp on identical clouds converges immediately") {
  const PointCloud c = structured_scene(61);
  GicpParams p;
  p.max_correspondence_distance = 2.0;
  const GicpResult res = gicp(c, c, RigidTransform::identity(), p);
  CHECK(res.converged);
  CHECK(res.iterations <= 2);
  CHECK(res.final_cost < 1e-12);
  CHECK(test::max_abs_diff(res.transform, RigidTransform::identity()) < 1e-9);
}

TEST_CASE("gicp recovers a small known displacement") {
  const PointCloud tgt = structured_scene(62, 1200);
  RigidTransform gt;
  gt.rotation = rot_z(1.0 * M_PI / 180.0);
  gt.translation = Vec3(0.2, -0.1, 0.05);
  // source observed in its own frame: tgt = gt applied to src
  const PointCloud src = transform_cloud(invert(gt), tgt);

  GicpParams p;
  p.max_correspondence_distance = 1.5;
  const GicpResult res = gicp(src, tgt, RigidTransform::identity(), p);
  CHECK(res.converged);
  CHECK((res.transform.translation - gt.translation).norm() < 0.02);
  CHECK(rotation_angle(res.transform.rotation * gt.rotation.transpose()) <
        0.1 * M_PI / 180.0);
}

TEST_CASE("gicp flags hopeless initialization") {
  const PointCloud tgt = structured_scene(63, 400);
  PointCloud src = structured_scene(64, 400);
  RigidTransform far_off;
  far_off.translation = Vec3(500.0, 0, 0);
  GicpParams p;
  p.max_correspondence_distance = 1.0;
  const GicpResult res = gicp(src, tgt, far_off, p);
  CHECK_FALSE(res.converged);
  CHECK(test::max_abs_diff(res.transform, far_off) == 0.0);  // unchanged init
  CHECK(res.correspondences == 0);
}

TEST_CASE("gicp accepted-step costs never increase") {
  const PointCloud tgt = structured_scene(65, 800);
  RigidTransform gt;
  gt.rotation = rot_z(3.0 * M_PI / 180.0) * rot_x(1.0 * M_PI / 180.0);
  gt.translation = Vec3(0.5, 0.3, -0.1);
  const PointCloud src = transform_cloud(invert(gt), tgt);
  GicpParams p;
  p.max_correspondence_distance = 2.5;
  const GicpResult res = gicp(src, tgt, RigidTransform::identity(), p);
  REQUIRE(!res.step_costs.empty());
  for (const auto& [before, after] : res.step_costs) {
    CHECK(after <= before);
  }
}

TEST_CASE("gicp equivariance under a source-frame change") {
  const PointCloud tgt = structured_scene(66, 700);
  RigidTransform gt;
  gt.rotation = rot_z(0.02);
  gt.translation = Vec3(0.3, -0.2, 0.1);
  const PointCloud src = transform_cloud(invert(gt), tgt);

  std::mt19937_64 rng(67);
  const RigidTransform t0 = test::random_transform(rng, 2.0);
  const PointCloud src_moved = transform_cloud(t0, src);

  GicpParams p;
  p.max_correspondence_distance = 2.5;
  p.translation_epsilon = 1e-7;
  p.rotation_epsilon = 1e-7;
  const GicpResult direct = gicp(src, tgt, RigidTransform::identity(), p);
  const GicpResult moved = gicp(src_moved, tgt, compose(RigidTransform::identity(), invert(t0)), p);

  // fused alignment of the physical points must agree
  for (int i = 0; i < 50; ++i) {
    const Vec3 a = direct.transform.apply(src.points[i]);
    const Vec3 b = moved.transform.apply(src_moved.points[i]);
    CHECK((a - b).norm() < 1e-6);
  }
}

TEST_CASE("gicp with identity covariances matches point-to-point icp") {
  std::mt19937_64 rng(68);
  const PointCloud tgt = test::random_cloud(rng, 50, 5.0);
  RigidTransform gt;
  gt.rotation = rot_z(0.03);
  gt.translation = Vec3(0.1, -0.05, 0.08);
  const PointCloud src = transform_cloud(invert(gt), tgt);

  GicpParams p;
  p.max_correspondence_distance = 1.0;
  p.covariance_k = 5;
  p.epsilon_plane = 1.0;  // covariances collapse to identity
  p.translation_epsilon = 1e-10;
  p.rotation_epsilon = 1e-10;
  p.max_iterations = 200;
  const GicpResult res = gicp(src, tgt, RigidTransform::identity(), p);
  const RigidTransform oracle =
      point_to_point_icp(src, tgt, RigidTransform::identity(), 1.0, 200);
  CHECK(test::max_abs_diff(res.transform, oracle) < 1e-6);
}

TEST_CASE("gicp cloud preconditions") {
  PointCloud tiny;
  tiny.points = {{0, 0, 0}, {1, 0, 0}};
  CHECK_THROWS_AS(GicpCloud(tiny, 20, 1e-3), std::invalid_argument);
}
