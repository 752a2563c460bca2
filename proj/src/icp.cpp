#include "lidarfuse/icp.hpp"

#include "lidarfuse/se3.hpp"

#include <cmath>
#include <stdexcept>

namespace lidarfuse {

GicpCloud::GicpCloud(const PointCloud& c, int covariance_k, double epsilon_plane)
    : points_(c.points) {
  if (static_cast<int>(points_.size()) < covariance_k) {
    throw std::invalid_argument("GicpCloud: cloud smaller than covariance_k");
  }
  tree_.build(points_);
  covariances_.resize(points_.size());
  std::vector<KdTree3::Hit> hits;
  for (std::size_t i = 0; i < points_.size(); ++i) {
    tree_.knn(points_[i], covariance_k, hits);
    Vec3 mean = Vec3::Zero();
    for (const auto& h : hits) mean += points_[h.index];
    mean /= static_cast<double>(hits.size());
    Mat3 cov = Mat3::Zero();
    for (const auto& h : hits) {
      const Vec3 d = points_[h.index] - mean;
      cov += d * d.transpose();
    }
    cov /= static_cast<double>(hits.size());
    Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
    const Mat3 v = es.eigenvectors();
    // Plane-to-plane model: flatten the smallest direction only.
    Mat3 d = Mat3::Zero();
    d(0, 0) = epsilon_plane;
    d(1, 1) = 1.0;
    d(2, 2) = 1.0;
    covariances_[i] = v * d * v.transpose();
  }
}

namespace {

struct Pair {
  int src;
  int tgt;
};

double pair_cost(const std::vector<Pair>& pairs, const std::vector<Mat3>& ms,
                 const GicpCloud& src, const GicpCloud& tgt, const RigidTransform& t) {
  double cost = 0.0;
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const Vec3 d = tgt.points()[pairs[k].tgt] - t.apply(src.points()[pairs[k].src]);
    cost += d.dot(ms[k] * d);
  }
  return cost / static_cast<double>(pairs.size());
}

}  // namespace

GicpResult gicp(const GicpCloud& src, const GicpCloud& tgt, const RigidTransform& init,
                const GicpParams& p) {
  GicpResult res;
  res.transform = init;

  std::vector<Pair> pairs;
  std::vector<Mat3> ms;
  pairs.reserve(src.size());
  double lambda = 1e-6;

  for (int iter = 0; iter < p.max_iterations; ++iter) {
    const RigidTransform t = res.transform;
    pairs.clear();
    for (std::size_t i = 0; i < src.size(); ++i) {
      const auto hit = tgt.tree().nearest(t.apply(src.points()[i]), p.max_correspondence_distance);
      if (hit.index >= 0) pairs.push_back({static_cast<int>(i), hit.index});
    }
    res.correspondences = static_cast<int>(pairs.size());
    if (pairs.empty()) {
      res.converged = false;
      return res;
    }

    ms.resize(pairs.size());
    for (std::size_t k = 0; k < pairs.size(); ++k) {
      const Mat3 combined = tgt.covariances()[pairs[k].tgt] +
                            t.rotation * src.covariances()[pairs[k].src] * t.rotation.transpose();
      ms[k] = combined.inverse();
    }

    const double cost_before = pair_cost(pairs, ms, src, tgt, t);

    Mat6 h = Mat6::Zero();
    Vec6 g = Vec6::Zero();
    for (std::size_t k = 0; k < pairs.size(); ++k) {
      const Vec3 y = t.apply(src.points()[pairs[k].src]);
      const Vec3 d = tgt.points()[pairs[k].tgt] - y;
      Eigen::Matrix<double, 3, 6> j;
      j.leftCols<3>() = -Mat3::Identity();
      j.rightCols<3>() = se3::hat(y);
      const Mat3 m = ms[k];
      h += j.transpose() * m * j;
      g += j.transpose() * m * d;
    }

    // Damped step; keeps the accepted cost sequence non-increasing.
    bool accepted = false;
    Vec6 delta = Vec6::Zero();
    for (int attempt = 0; attempt < 6; ++attempt) {
      Mat6 hd = h;
      for (int i = 0; i < 6; ++i) hd(i, i) += lambda * std::max(h(i, i), 1e-12);
      delta = hd.ldlt().solve(-g);
      const RigidTransform t_try = compose(se3::exp(delta), t);
      const double cost_try = pair_cost(pairs, ms, src, tgt, t_try);
      if (cost_try <= cost_before) {
        res.transform = t_try;
        res.step_costs.emplace_back(cost_before, cost_try);
        res.final_cost = cost_try;
        lambda = std::max(lambda / 3.0, 1e-9);
        accepted = true;
        break;
      }
      lambda *= 10.0;
    }
    res.iterations = iter + 1;
    if (!accepted) {
      // Cost cannot be reduced further under the current linearization.
      res.final_cost = cost_before;
      res.converged = true;
      return res;
    }
    if (delta.head<3>().norm() < p.translation_epsilon &&
        delta.tail<3>().norm() < p.rotation_epsilon) {
      res.converged = true;
      return res;
    }
  }
  res.converged = false;
  return res;
}

GicpResult gicp(const PointCloud& src, const PointCloud& tgt, const RigidTransform& init,
                const GicpParams& p) {
  const GicpCloud s(src, p.covariance_k, p.epsilon_plane);
  const GicpCloud t(tgt, p.covariance_k, p.epsilon_plane);
  return gicp(s, t, init, p);
}

}  // namespace lidarfuse
