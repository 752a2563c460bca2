#include "lidarfuse/features.hpp"

#include "lidarfuse/kdtree.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>
#include <unordered_map>

namespace lidarfuse {

std::vector<Keypoint> detect_sift_keypoints(const PointCloud& c, double min_scale, int octaves,
                                            int scales_per_octave, double min_contrast) {
  if (c.empty() || !c.has_curvature()) {
    throw std::invalid_argument("detect_sift_keypoints: cloud needs curvature");
  }
  if (min_scale <= 0.0) throw std::invalid_argument("detect_sift_keypoints: min_scale <= 0");

  const int n = static_cast<int>(c.size());
  KdTree3 tree(c.points);
  std::vector<int> nb;

  // best |DoG| response per point, across all octaves and levels
  std::vector<double> best_response(n, 0.0);
  std::vector<double> best_scale(n, 0.0);

  const int n_levels = scales_per_octave + 2;  // smoothed levels per octave
  std::vector<std::vector<double>> smoothed(n_levels, std::vector<double>(n));
  std::vector<std::vector<double>> dog(n_levels - 1, std::vector<double>(n));

  for (int o = 0; o < octaves; ++o) {
    const double base = min_scale * std::pow(2.0, o);
    std::vector<double> sigmas(n_levels);
    for (int l = 0; l < n_levels; ++l) {
      sigmas[l] = base * std::pow(2.0, static_cast<double>(l) / scales_per_octave);
    }

    for (int l = 0; l < n_levels; ++l) {
      const double sigma = sigmas[l];
      const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
      for (int i = 0; i < n; ++i) {
        tree.radius_search(c.points[i], 3.0 * sigma, nb);
        double wsum = 0.0, vsum = 0.0;
        for (int j : nb) {
          const double w = std::exp(-(c.points[j] - c.points[i]).squaredNorm() * inv2s2);
          wsum += w;
          vsum += w * c.curvature[j];
        }
        smoothed[l][i] = wsum > 0.0 ? vsum / wsum : c.curvature[i];
      }
    }
    for (int l = 0; l + 1 < n_levels; ++l) {
      for (int i = 0; i < n; ++i) dog[l][i] = smoothed[l + 1][i] - smoothed[l][i];
    }

    // extrema over (space, scale) at interior DoG levels
    for (int l = 1; l + 1 < n_levels - 1; ++l) {
      for (int i = 0; i < n; ++i) {
        const double v = dog[l][i];
        if (std::abs(v) < min_contrast) continue;
        tree.radius_search(c.points[i], sigmas[l], nb);
        bool is_max = true, is_min = true;
        for (int dl = l - 1; dl <= l + 1 && (is_max || is_min); ++dl) {
          for (int j : nb) {
            if (dl == l && j == i) continue;
            if (dog[dl][j] >= v) is_max = false;
            if (dog[dl][j] <= v) is_min = false;
            if (!is_max && !is_min) break;
          }
        }
        if ((is_max || is_min) && std::abs(v) > best_response[i]) {
          best_response[i] = std::abs(v);
          best_scale[i] = sigmas[l];
        }
      }
    }
  }

  std::vector<Keypoint> keypoints;
  for (int i = 0; i < n; ++i) {
    if (best_response[i] > 0.0) {
      keypoints.push_back({c.points[i], i, best_scale[i]});
    }
  }
  return keypoints;
}

namespace {

// Darboux-frame angular features of a point pair (Rusu's convention, source
// chosen as the point whose normal is closer to the connecting line).
bool pair_features(const Vec3& p1, const Vec3& n1, const Vec3& p2, const Vec3& n2, double& f1,
                   double& f2, double& f3) {
  Vec3 dp = p2 - p1;
  const double d = dp.norm();
  if (d <= 0.0) return false;
  Vec3 ns = n1, nt = n2;
  const double a1 = n1.dot(dp) / d;
  const double a2 = n2.dot(-dp) / d;
  if (std::abs(a1) < std::abs(a2)) {
    std::swap(ns, nt);
    dp = -dp;
  }
  const Vec3 u = ns;
  Vec3 v = dp.cross(u);
  const double vn = v.norm();
  if (vn < 1e-12) return false;
  v /= vn;
  const Vec3 w = u.cross(v);
  f1 = v.dot(nt);               // alpha in [-1, 1]
  f2 = u.dot(dp) / d;           // phi in [-1, 1]
  f3 = std::atan2(w.dot(nt), u.dot(nt));  // theta in (-pi, pi]
  return true;
}

int bin11(double x, double lo, double hi) {
  const int b = static_cast<int>(11.0 * (x - lo) / (hi - lo));
  return std::clamp(b, 0, 10);
}

std::array<double, 33> compute_spfh(const PointCloud& c, const KdTree3& tree, int idx,
                                    double radius, std::vector<int>& nb) {
  std::array<double, 33> h{};
  tree.radius_search(c.points[idx], radius, nb);
  int count = 0;
  double f1, f2, f3;
  for (int j : nb) {
    if (j == idx) continue;
    if (!c.normal_valid.empty() && (!c.normal_valid[idx] || !c.normal_valid[j])) continue;
    if (!pair_features(c.points[idx], c.normals[idx], c.points[j], c.normals[j], f1, f2, f3)) {
      continue;
    }
    h[bin11(f1, -1.0, 1.0)] += 1.0;
    h[11 + bin11(f2, -1.0, 1.0)] += 1.0;
    h[22 + bin11(f3, -M_PI, M_PI)] += 1.0;
    ++count;
  }
  if (count > 0) {
    const double s = 100.0 / count;
    for (auto& v : h) v *= s;
  }
  return h;
}

}  // namespace

std::vector<FpfhDescriptor> compute_fpfh(const PointCloud& c,
                                         const std::vector<Keypoint>& keypoints, double radius) {
  if (!c.has_normals()) throw std::invalid_argument("compute_fpfh: cloud needs normals");
  KdTree3 tree(c.points);
  std::unordered_map<int, std::array<double, 33>> spfh_cache;
  std::vector<int> nb, nb2;
  auto spfh = [&](int idx) -> const std::array<double, 33>& {
    auto it = spfh_cache.find(idx);
    if (it == spfh_cache.end()) {
      it = spfh_cache.emplace(idx, compute_spfh(c, tree, idx, radius, nb2)).first;
    }
    return it->second;
  };

  std::vector<FpfhDescriptor> out(keypoints.size());
  for (std::size_t k = 0; k < keypoints.size(); ++k) {
    const int idx = keypoints[k].source_index;
    tree.radius_search(c.points[idx], radius, nb);
    std::vector<int> neighbors;
    for (int j : nb) {
      if (j != idx) neighbors.push_back(j);
    }
    if (neighbors.empty()) continue;  // zero descriptor, flagged invalid

    std::array<double, 33> h = spfh(idx);
    std::array<double, 33> acc{};
    const std::vector<int> nb_copy = neighbors;  // nb reused inside spfh()
    for (int j : nb_copy) {
      const double w = (c.points[idx] - c.points[j]).norm();
      if (w <= 0.0) continue;
      const auto& hj = spfh(j);
      for (int b = 0; b < 33; ++b) acc[b] += hj[b] / w;
    }
    for (int b = 0; b < 33; ++b) h[b] += acc[b] / static_cast<double>(nb_copy.size());

    // percentage-normalize every 11-bin block
    for (int blk = 0; blk < 3; ++blk) {
      double s = 0.0;
      for (int b = 0; b < 11; ++b) s += h[11 * blk + b];
      if (s > 0.0) {
        for (int b = 0; b < 11; ++b) h[11 * blk + b] *= 100.0 / s;
      }
    }
    out[k].histogram = h;
    out[k].valid = true;
  }
  return out;
}

std::vector<Correspondence> match_correspondences(const std::vector<FpfhDescriptor>& src,
                                                  const std::vector<FpfhDescriptor>& tgt) {
  if (src.empty() || tgt.empty()) {
    throw std::invalid_argument("match_correspondences: empty descriptor set");
  }
  std::vector<Correspondence> out;
  out.reserve(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    int best_j = -1;
    for (std::size_t j = 0; j < tgt.size(); ++j) {
      double d2 = 0.0;
      for (int b = 0; b < 33; ++b) {
        const double d = src[i].histogram[b] - tgt[j].histogram[b];
        d2 += d * d;
      }
      if (d2 < best) {
        best = d2;
        best_j = static_cast<int>(j);
      }
    }
    out.push_back({static_cast<int>(i), best_j, std::sqrt(best)});
  }
  return out;
}

RigidTransform estimate_transform_svd(const std::vector<std::pair<Vec3, Vec3>>& pairs) {
  if (pairs.size() < 3) throw std::invalid_argument("estimate_transform_svd: need >= 3 pairs");
  Vec3 cs = Vec3::Zero(), ct = Vec3::Zero();
  for (const auto& [s, t] : pairs) {
    cs += s;
    ct += t;
  }
  cs /= static_cast<double>(pairs.size());
  ct /= static_cast<double>(pairs.size());
  Mat3 cov = Mat3::Zero();
  double spread = 0.0;
  for (const auto& [s, t] : pairs) {
    cov += (s - cs) * (t - ct).transpose();
    spread += (s - cs).squaredNorm();
  }
  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 sv = svd.singularValues();
  // Collinear sources leave the rotation about the line unobservable.
  if (spread <= 0.0 || sv(1) <= 1e-9 * std::max(sv(0), 1e-300)) {
    throw std::invalid_argument("estimate_transform_svd: degenerate point configuration");
  }
  Mat3 d = Mat3::Identity();
  d(2, 2) = (svd.matrixV() * svd.matrixU().transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  RigidTransform t;
  t.rotation = svd.matrixV() * d * svd.matrixU().transpose();
  t.translation = ct - t.rotation * cs;
  return t;
}

std::pair<std::vector<Correspondence>, RigidTransform> ransac_filter(
    const std::vector<Correspondence>& corrs, const std::vector<Keypoint>& src_kp,
    const std::vector<Keypoint>& tgt_kp, double inlier_threshold, int max_iterations,
    std::uint64_t seed) {
  const int n = static_cast<int>(corrs.size());
  if (n < 3) throw std::invalid_argument("ransac_filter: insufficient correspondences");

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick(0, n - 1);
  const double thr2 = inlier_threshold * inlier_threshold;

  std::vector<int> best_inliers;
  RigidTransform best_transform;
  bool found = false;
  double required = static_cast<double>(max_iterations);

  for (int iter = 0; iter < max_iterations && iter < required; ++iter) {
    int a = pick(rng), b = pick(rng), c = pick(rng);
    if (a == b || b == c || a == c) continue;
    std::vector<std::pair<Vec3, Vec3>> sample = {
        {src_kp[corrs[a].src_idx].position, tgt_kp[corrs[a].tgt_idx].position},
        {src_kp[corrs[b].src_idx].position, tgt_kp[corrs[b].tgt_idx].position},
        {src_kp[corrs[c].src_idx].position, tgt_kp[corrs[c].tgt_idx].position}};
    RigidTransform t;
    try {
      t = estimate_transform_svd(sample);
    } catch (const std::invalid_argument&) {
      continue;  // collinear sample
    }
    std::vector<int> inliers;
    for (int k = 0; k < n; ++k) {
      const Vec3 mapped = t.apply(src_kp[corrs[k].src_idx].position);
      if ((mapped - tgt_kp[corrs[k].tgt_idx].position).squaredNorm() <= thr2) {
        inliers.push_back(k);
      }
    }
    if (inliers.size() > best_inliers.size()) {
      best_inliers = std::move(inliers);
      best_transform = t;
      found = true;
      const double w = static_cast<double>(best_inliers.size()) / n;
      const double denom = std::log(1.0 - std::min(w * w * w, 1.0 - 1e-12));
      if (denom < 0.0) required = std::log(1.0 - 0.999) / denom;
    }
  }
  if (!found || best_inliers.size() < 3) {
    throw std::runtime_error("ransac_filter: no valid consensus found");
  }

  std::vector<std::pair<Vec3, Vec3>> pairs;
  pairs.reserve(best_inliers.size());
  std::vector<Correspondence> filtered;
  filtered.reserve(best_inliers.size());
  for (int k : best_inliers) {
    pairs.emplace_back(src_kp[corrs[k].src_idx].position, tgt_kp[corrs[k].tgt_idx].position);
    filtered.push_back(corrs[k]);
  }
  try {
    best_transform = estimate_transform_svd(pairs);
  } catch (const std::invalid_argument&) {
    // consensus set itself degenerate; keep the sample transform
  }
  return {std::move(filtered), best_transform};
}

bool check_up_vector(const RigidTransform& t) { return t.rotation(2, 2) > 0.0; }

std::optional<double> p2p_error(const PointCloud& src, const KdTree3& tgt_tree,
                                const RigidTransform& t, double r_c) {
  if (r_c <= 0.0) throw std::invalid_argument("p2p_error: r_c must be > 0");
  double sum = 0.0;
  int n = 0;
  for (const Vec3& p : src.points) {
    const auto hit = tgt_tree.nearest(t.apply(p), r_c);
    if (hit.index >= 0) {
      sum += hit.dist2;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return std::sqrt(sum / static_cast<double>(n));
}

std::optional<double> p2p_error(const PointCloud& src, const PointCloud& tgt,
                                const RigidTransform& t, double r_c) {
  const KdTree3 tree(tgt.points);
  return p2p_error(src, tree, t, r_c);
}

CoarseRegistrationResult coarse_register_pair(const PointCloud& src, const PointCloud& tgt,
                                              const CoarseParams& params) {
  const auto src_kp = detect_sift_keypoints(src, params.sift_min_scale, params.sift_octaves,
                                            params.sift_scales_per_octave,
                                            params.sift_min_contrast);
  const auto tgt_kp = detect_sift_keypoints(tgt, params.sift_min_scale, params.sift_octaves,
                                            params.sift_scales_per_octave,
                                            params.sift_min_contrast);
  if (src_kp.size() < 3 || tgt_kp.size() < 3) {
    throw std::runtime_error("coarse_register_pair: insufficient correspondences");
  }
  const auto src_desc = compute_fpfh(src, src_kp, params.fpfh_radius);
  const auto tgt_desc = compute_fpfh(tgt, tgt_kp, params.fpfh_radius);
  auto pool = match_correspondences(src_desc, tgt_desc);

  const GicpCloud src_gicp(src, params.gicp.covariance_k, params.gicp.epsilon_plane);
  const GicpCloud tgt_gicp(tgt, params.gicp.covariance_k, params.gicp.epsilon_plane);
  const KdTree3 tgt_tree(tgt.points);

  CoarseRegistrationResult res;
  res.seed = params.seed;
  const double thr2 = params.inlier_threshold * params.inlier_threshold;
  bool have_best = false;
  double best_score = std::numeric_limits<double>::infinity();

  for (int iter = 0; iter < params.max_outer_iterations; ++iter) {
    if (pool.size() < 3) break;
    std::vector<Correspondence> filtered;
    RigidTransform t0;
    try {
      std::tie(filtered, t0) =
          ransac_filter(pool, src_kp, tgt_kp, params.inlier_threshold,
                        params.ransac_max_iterations, params.seed + iter);
    } catch (const std::runtime_error&) {
      break;
    } catch (const std::invalid_argument&) {
      break;
    }
    res.iterations_used = iter + 1;

    CoarseCandidate cand;
    cand.inlier_count = static_cast<int>(filtered.size());
    cand.up_ok = check_up_vector(t0);
    if (cand.up_ok) {
      const GicpResult refined = gicp(src_gicp, tgt_gicp, t0, params.gicp);
      cand.transform = refined.transform;
      cand.p2p = p2p_error(src, tgt_tree, refined.transform, params.p2p_cutoff);
    } else {
      cand.transform = t0;
    }
    res.candidates.push_back(cand);

    if (cand.up_ok && cand.p2p.has_value() && cand.p2p.value() < best_score) {
      best_score = cand.p2p.value();
      res.transform = cand.transform;
      res.p2p_error = cand.p2p;
      res.inlier_count = cand.inlier_count;
      have_best = true;
    }

    // Drop this iteration's supporting correspondences before the next try.
    std::vector<Correspondence> remaining;
    remaining.reserve(pool.size());
    for (const auto& corr : pool) {
      const Vec3 mapped = t0.apply(src_kp[corr.src_idx].position);
      if ((mapped - tgt_kp[corr.tgt_idx].position).squaredNorm() >= thr2) {
        remaining.push_back(corr);
      }
    }
    pool = std::move(remaining);
  }

  if (!have_best) {
    throw std::runtime_error("coarse_register_pair: no admissible transform");
  }
  return res;
}

}  // namespace lidarfuse
