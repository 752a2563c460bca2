#include "lidarfuse/eval.hpp"

#include "doctest.h"
#include "test_helpers.hpp"

#include <cmath>
#include <random>

using namespace lidarfuse;
using lidarfuse::eval::evaluate_run;
using lidarfuse::eval::rmse;
using lidarfuse::eval::rot_error;
using lidarfuse::eval::trans_error;

namespace {

std::vector<PoseRecord> synthetic_gt(std::mt19937_64& rng, int n_sensors, int n_frames) {
  std::vector<PoseRecord> gt;
  std::vector<RigidTransform> base;
  base.push_back(RigidTransform::identity());
  RigidTransform t1;
  t1.translation = Vec3(30, 0, 0);
  t1.rotation = rot_z(0.4);
  base.push_back(t1);
  RigidTransform t2;
  t2.translation = Vec3(15, 25, 0);
  t2.rotation = rot_z(-0.8);
  base.push_back(t2);
  RigidTransform t3;
  t3.translation = Vec3(45, 25, 1.0);
  t3.rotation = rot_z(2.1);
  base.push_back(t3);

  std::uniform_real_distribution<double> u(-0.02, 0.02);
  for (int n = 0; n < n_frames; ++n) {
    for (int i = 0; i < n_sensors; ++i) {
      RigidTransform pose = base[i];
      pose.translation += Vec3(u(rng), u(rng), u(rng));  // small sway
      pose.rotation = rot_z(u(rng)) * pose.rotation;
      gt.push_back({n, i, pose});
    }
  }
  return gt;
}

}  // namespace

TEST_CASE("estimate_world_alignment recovers a known alignment") {
  std::vector<Vec3> gt_pos = {{0, 0, 0}, {10, 0, 0}, {0, 8, 0}, {10, 8, 1}};
  CHECK(test::max_abs_diff(eval::estimate_world_alignment(gt_pos, gt_pos),
                           RigidTransform::identity()) < 1e-12);

  std::mt19937_64 rng(101);
  const RigidTransform t = test::random_transform(rng, 20.0);
  std::vector<Vec3> pred;
  for (const auto& p : gt_pos) pred.push_back(invert(t).apply(p));
  const RigidTransform rec = eval::estimate_world_alignment(pred, gt_pos);
  CHECK(test::max_abs_diff(rec, t) < 1e-9);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    CHECK((rec.apply(pred[i]) - gt_pos[i]).norm() < 1e-9);
  }
}

TEST_CASE("estimate_world_alignment noise bound and degeneracy") {
  std::mt19937_64 rng(102);
  std::normal_distribution<double> noise(0.0, 0.01);
  std::vector<Vec3> gt_pos = {{0, 0, 0}, {10, 0, 0}, {0, 8, 0}, {10, 8, 0}};
  double rms_sum = 0.0;
  const int trials = 100;
  for (int k = 0; k < trials; ++k) {
    const RigidTransform t = test::random_transform(rng, 5.0);
    std::vector<Vec3> pred;
    for (const auto& p : gt_pos) {
      pred.push_back(invert(t).apply(p) + Vec3(noise(rng), noise(rng), noise(rng)));
    }
    const RigidTransform rec = eval::estimate_world_alignment(pred, gt_pos);
    double rss = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      rss += (rec.apply(pred[i]) - gt_pos[i]).squaredNorm();
    }
    rms_sum += std::sqrt(rss / pred.size());
  }
  CHECK(rms_sum / trials <= 0.03);

  const std::vector<Vec3> collinear = {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}};
  CHECK_THROWS_AS(eval::estimate_world_alignment(collinear, collinear), std::invalid_argument);

  // swapped roles compose to identity
  std::vector<Vec3> pred = {{1, 2, 3}, {4, 5, 6}, {7, 8, 0}, {2, 9, 4}};
  const RigidTransform fwd = eval::estimate_world_alignment(pred, gt_pos);
  const RigidTransform bwd = eval::estimate_world_alignment(gt_pos, pred);
  CHECK(test::max_abs_diff(compose(fwd, bwd), RigidTransform::identity()) < 1e-9);
}

TEST_CASE("trans_error basics") {
  CHECK(trans_error(Vec3(1, 2, 3), Vec3(1, 2, 3)) == 0.0);
  CHECK(trans_error(Vec3(0.03, 0.04, 0.0), Vec3::Zero()) == doctest::Approx(0.05));
  std::mt19937_64 rng(103);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  for (int k = 0; k < 50; ++k) {
    const Vec3 a(u(rng), u(rng), u(rng)), b(u(rng), u(rng), u(rng));
    const double direct = std::sqrt((a.x() - b.x()) * (a.x() - b.x()) +
                                    (a.y() - b.y()) * (a.y() - b.y()) +
                                    (a.z() - b.z()) * (a.z() - b.z()));
    CHECK(std::abs(trans_error(a, b) - direct) < 1e-12);
  }
}

TEST_CASE("rot_error basics and quaternion oracle") {
  std::mt19937_64 rng(104);
  const Mat3 r = test::random_transform(rng).rotation;
  CHECK(rot_error(r, r) == doctest::Approx(0.0));
  CHECK(rot_error(rot_z(M_PI / 180.0) * r, r) == doctest::Approx(M_PI / 180.0).epsilon(1e-9));
  CHECK(rot_error(r, rot_z(M_PI / 180.0) * r) ==
        doctest::Approx(M_PI / 180.0).epsilon(1e-9));  // symmetry

  for (int k = 0; k < 50; ++k) {
    const Mat3 a = test::random_transform(rng).rotation;
    const Mat3 b = test::random_transform(rng).rotation;
    const Eigen::Quaterniond qa(a), qb(b);
    const double expected = 2.0 * std::acos(std::min(std::abs(qa.dot(qb)), 1.0));
    CHECK(rot_error(a, b) == doctest::Approx(expected).epsilon(1e-9));
  }
}

TEST_CASE("rmse examples and Jensen bound") {
  CHECK(rmse({0, 0, 0}) == 0.0);
  CHECK(rmse({3, 4}) == doctest::Approx(std::sqrt(12.5)));
  CHECK(rmse({2.5, 2.5, 2.5}) == doctest::Approx(2.5));
  CHECK_THROWS_AS(rmse({}), std::invalid_argument);

  std::mt19937_64 rng(105);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  std::vector<double> errs;
  double mean = 0.0;
  for (int k = 0; k < 100; ++k) {
    errs.push_back(u(rng));
    mean += errs.back();
  }
  CHECK(rmse(errs) >= mean / errs.size());
}

TEST_CASE("evaluate_run is exact for perfect predictions") {
  std::mt19937_64 rng(106);
  const auto gt = synthetic_gt(rng, 4, 10);
  const auto report = evaluate_run(gt, gt);
  CHECK(report.avg_rmse_trans < 1e-9);
  CHECK(report.avg_rmse_rot < 1e-7);
  CHECK(report.missing_frames == 0);
  REQUIRE(report.per_sensor.size() == 4);
}

TEST_CASE("evaluate_run absorbs a global rigid gauge transform") {
  std::mt19937_64 rng(107);
  const auto gt = synthetic_gt(rng, 4, 10);
  const RigidTransform g = test::random_transform(rng, 50.0);
  std::vector<PoseRecord> shifted = gt;
  for (auto& r : shifted) r.pose = compose(g, r.pose);
  const auto report = evaluate_run(shifted, gt);
  CHECK(report.avg_rmse_trans < 1e-9);
  CHECK(report.avg_rmse_rot < 1e-7);
}

TEST_CASE("evaluate_run under isotropic position noise matches expectation") {
  std::mt19937_64 rng(108);
  const int frames = 400;
  const auto gt = synthetic_gt(rng, 4, frames);
  const double sigma = 0.02;
  std::normal_distribution<double> noise(0.0, sigma);
  std::vector<PoseRecord> pred = gt;
  for (auto& r : pred) {
    if (r.time_step == 0) continue;  // keep the alignment anchor exact
    r.pose.translation += Vec3(noise(rng), noise(rng), noise(rng));
  }
  const auto report = evaluate_run(pred, gt);
  // E||n||^2 = 3 sigma^2  =>  rmse ~ sigma * sqrt(3)
  const double expected = sigma * std::sqrt(3.0);
  CHECK(report.avg_rmse_trans == doctest::Approx(expected).epsilon(0.1));
}

TEST_CASE("evaluate_run counts missing frames and skips rotation when asked") {
  std::mt19937_64 rng(109);
  auto gt = synthetic_gt(rng, 4, 6);
  auto pred = gt;
  // remove one GT row: the matching prediction has nothing to compare against
  gt.erase(gt.begin() + 17);
  const auto report = evaluate_run(pred, gt, /*gt_has_orientation=*/false);
  CHECK(report.missing_frames == 1);
  CHECK_FALSE(report.rotation_evaluated);
  CHECK(report.avg_rmse_rot == 0.0);
}
