#include "lidarfuse/preprocess.hpp"

#include "lidarfuse/kdtree.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <stdexcept>
#include <tuple>
#include <vector>

namespace lidarfuse {

PointCloud remove_outliers(const PointCloud& c, int k, double stddev_mult, bool* skipped) {
  if (skipped) *skipped = false;
  if (k < 1) throw std::invalid_argument("remove_outliers: k must be >= 1");
  if (c.size() < static_cast<std::size_t>(k) + 1) {
    if (skipped) *skipped = true;
    return c;
  }
  KdTree3 tree(c.points);
  std::vector<double> mean_dist(c.size());
  std::vector<KdTree3::Hit> hits;
  for (std::size_t i = 0; i < c.size(); ++i) {
    tree.knn(c.points[i], k + 1, hits);  // self included at distance 0
    double sum = 0.0;
    for (const auto& h : hits) sum += std::sqrt(h.dist2);
    mean_dist[i] = sum / static_cast<double>(k);
  }
  const double mean =
      std::accumulate(mean_dist.begin(), mean_dist.end(), 0.0) / static_cast<double>(c.size());
  double var = 0.0;
  for (double d : mean_dist) var += (d - mean) * (d - mean);
  var /= static_cast<double>(c.size());
  const double cutoff = mean + stddev_mult * std::sqrt(var);

  std::vector<int> keep;
  keep.reserve(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    if (mean_dist[i] <= cutoff) keep.push_back(static_cast<int>(i));
  }
  return select_points(c, keep);
}

PointCloud estimate_normals(const PointCloud& c, double radius, const Vec3& viewpoint) {
  if (radius <= 0.0) throw std::invalid_argument("estimate_normals: radius must be > 0");
  PointCloud out = c;
  out.normals.assign(c.size(), Vec3::Zero());
  out.curvature.assign(c.size(), 0.0);
  out.normal_valid.assign(c.size(), 0);

  KdTree3 tree(c.points);
  std::vector<int> nb;
  for (std::size_t i = 0; i < c.size(); ++i) {
    tree.radius_search(c.points[i], radius, nb);
    if (nb.size() < 4) continue;  // self plus at least 3 neighbors
    Vec3 mean = Vec3::Zero();
    for (int j : nb) mean += c.points[j];
    mean /= static_cast<double>(nb.size());
    Mat3 cov = Mat3::Zero();
    for (int j : nb) {
      const Vec3 d = c.points[j] - mean;
      cov += d * d.transpose();
    }
    cov /= static_cast<double>(nb.size());
    Eigen::SelfAdjointEigenSolver<Mat3> es(cov);  // eigenvalues ascending
    Vec3 n = es.eigenvectors().col(0);
    if (n.dot(viewpoint - c.points[i]) < 0.0) n = -n;
    const double lsum = es.eigenvalues().sum();
    out.normals[i] = n.normalized();
    out.curvature[i] = lsum > 0.0 ? es.eigenvalues()[0] / lsum : 0.0;
    out.normal_valid[i] = 1;
  }
  return out;
}

namespace {

// Icosphere vertex directions with edge adjacency, used as the vote
// histogram cells on the unit sphere.
struct SphereGrid {
  std::vector<Vec3> dirs;
  std::vector<std::vector<int>> adjacency;
};

SphereGrid build_sphere_grid(int subdivisions) {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> verts = {
      {-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
      {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  for (auto& v : verts) v.normalize();
  std::vector<std::array<int, 3>> faces = {
      {0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
      {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
      {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
      {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};

  for (int s = 0; s < subdivisions; ++s) {
    std::map<std::pair<int, int>, int> midpoint;
    auto mid = [&](int a, int b) {
      const auto key = std::minmax(a, b);
      auto it = midpoint.find(key);
      if (it != midpoint.end()) return it->second;
      verts.push_back((verts[a] + verts[b]).normalized());
      const int idx = static_cast<int>(verts.size()) - 1;
      midpoint.emplace(key, idx);
      return idx;
    };
    std::vector<std::array<int, 3>> next;
    next.reserve(faces.size() * 4);
    for (const auto& f : faces) {
      const int a = mid(f[0], f[1]), b = mid(f[1], f[2]), c = mid(f[2], f[0]);
      next.push_back({f[0], a, c});
      next.push_back({f[1], b, a});
      next.push_back({f[2], c, b});
      next.push_back({a, b, c});
    }
    faces = std::move(next);
  }

  SphereGrid grid;
  grid.dirs = verts;
  grid.adjacency.assign(verts.size(), {});
  auto link = [&](int a, int b) {
    auto& adj = grid.adjacency[a];
    if (std::find(adj.begin(), adj.end(), b) == adj.end()) adj.push_back(b);
  };
  for (const auto& f : faces) {
    link(f[0], f[1]);
    link(f[1], f[0]);
    link(f[1], f[2]);
    link(f[2], f[1]);
    link(f[2], f[0]);
    link(f[0], f[2]);
  }
  return grid;
}

int nearest_cell(const SphereGrid& grid, const Vec3& dir) {
  int best = 0;
  double best_dot = -2.0;
  for (std::size_t i = 0; i < grid.dirs.size(); ++i) {
    const double d = grid.dirs[i].dot(dir);
    if (d > best_dot) {
      best_dot = d;
      best = static_cast<int>(i);
    }
  }
  return best;
}

struct OctreeContext {
  const PointCloud* cloud;
  const OctreeFilterParams* params;
  const SphereGrid* sphere;
  double cos_window;
  PointCloud* out;
};

void emit_centroid(const OctreeContext& ctx, const std::vector<int>& idx) {
  Vec3 centroid = Vec3::Zero();
  Vec3 normal = Vec3::Zero();
  double curv = 0.0;
  int curv_n = 0;
  for (int i : idx) {
    centroid += ctx.cloud->points[i];
    if (ctx.cloud->normal_valid.empty() || ctx.cloud->normal_valid[i]) {
      normal += ctx.cloud->normals[i];
    }
    if (ctx.cloud->has_curvature()) {
      curv += ctx.cloud->curvature[i];
      ++curv_n;
    }
  }
  centroid /= static_cast<double>(idx.size());
  ctx.out->points.push_back(centroid);
  const double nn = normal.norm();
  ctx.out->normals.push_back(nn > 0.0 ? Vec3(normal / nn) : Vec3::Zero());
  ctx.out->normal_valid.push_back(nn > 0.0 ? 1 : 0);
  ctx.out->curvature.push_back(curv_n > 0 ? curv / curv_n : 0.0);
}

// Vote on the sphere grid; returns the fraction of valid normals within the
// angular window of the dominant direction (1.0 when no valid normals).
double dominant_ratio(const OctreeContext& ctx, const std::vector<int>& idx) {
  std::vector<int> votes(ctx.sphere->dirs.size(), 0);
  std::vector<int> cells;
  cells.reserve(idx.size());
  int valid = 0;
  for (int i : idx) {
    if (!ctx.cloud->normal_valid.empty() && !ctx.cloud->normal_valid[i]) {
      cells.push_back(-1);
      continue;
    }
    const int cell = nearest_cell(*ctx.sphere, ctx.cloud->normals[i]);
    cells.push_back(cell);
    ++valid;
    ++votes[cell];
    for (int nb : ctx.sphere->adjacency[cell]) ++votes[nb];
  }
  if (valid == 0) return 1.0;
  const int dominant_cell = static_cast<int>(
      std::max_element(votes.begin(), votes.end()) - votes.begin());
  const Vec3 dominant = ctx.sphere->dirs[dominant_cell];
  int matching = 0;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (cells[k] < 0) continue;
    if (ctx.cloud->normals[idx[k]].dot(dominant) >= ctx.cos_window) ++matching;
  }
  return static_cast<double>(matching) / static_cast<double>(valid);
}

void refine_voxel(const OctreeContext& ctx, const std::vector<int>& idx, const Vec3& corner,
                  double size) {
  const auto& p = *ctx.params;
  const bool can_split = size / 2.0 >= p.min_voxel_size &&
                         static_cast<int>(idx.size()) >= p.min_points_per_voxel;
  if (!can_split || dominant_ratio(ctx, idx) >= p.dominant_ratio_threshold) {
    emit_centroid(ctx, idx);
    return;
  }
  std::array<std::vector<int>, 8> children;
  const double half = size / 2.0;
  const Vec3 center = corner + Vec3::Constant(half);
  for (int i : idx) {
    const Vec3& pt = ctx.cloud->points[i];
    const int child = (pt.x() >= center.x() ? 1 : 0) | (pt.y() >= center.y() ? 2 : 0) |
                      (pt.z() >= center.z() ? 4 : 0);
    children[child].push_back(i);
  }
  for (int child = 0; child < 8; ++child) {
    if (children[child].empty()) continue;
    const Vec3 child_corner = corner + Vec3((child & 1) ? half : 0.0, (child & 2) ? half : 0.0,
                                            (child & 4) ? half : 0.0);
    refine_voxel(ctx, children[child], child_corner, half);
  }
}

}  // namespace

PointCloud octree_downsample(const PointCloud& c, const OctreeFilterParams& p) {
  if (!c.has_normals()) {
    throw std::invalid_argument("octree_downsample: cloud has no normals, run estimate_normals");
  }
  PointCloud out;
  out.sensor_id = c.sensor_id;
  out.timestamp = c.timestamp;
  if (c.empty()) return out;

  const SphereGrid sphere = build_sphere_grid(2);  // 162 cells
  OctreeContext ctx{&c, &p, &sphere,
                    std::cos(p.angular_window_deg * M_PI / 180.0), &out};

  // Top level: grid of max_voxel_size cells anchored at the origin.
  std::map<std::tuple<std::int64_t, std::int64_t, std::int64_t>, std::vector<int>> cells;
  for (std::size_t i = 0; i < c.size(); ++i) {
    const Vec3& pt = c.points[i];
    cells[{static_cast<std::int64_t>(std::floor(pt.x() / p.max_voxel_size)),
           static_cast<std::int64_t>(std::floor(pt.y() / p.max_voxel_size)),
           static_cast<std::int64_t>(std::floor(pt.z() / p.max_voxel_size))}]
        .push_back(static_cast<int>(i));
  }
  for (const auto& [key, idx] : cells) {
    const Vec3 corner(static_cast<double>(std::get<0>(key)) * p.max_voxel_size,
                      static_cast<double>(std::get<1>(key)) * p.max_voxel_size,
                      static_cast<double>(std::get<2>(key)) * p.max_voxel_size);
    refine_voxel(ctx, idx, corner, p.max_voxel_size);
  }
  return out;
}

PointCloud voxel_downsample(const PointCloud& c, double voxel) {
  if (voxel <= 0.0) throw std::invalid_argument("voxel_downsample: voxel must be > 0");
  PointCloud out;
  out.sensor_id = c.sensor_id;
  out.timestamp = c.timestamp;
  struct Acc {
    Vec3 sum = Vec3::Zero();
    int n = 0;
  };
  std::map<std::tuple<std::int64_t, std::int64_t, std::int64_t>, Acc> cells;
  for (const Vec3& pt : c.points) {
    auto& acc = cells[{static_cast<std::int64_t>(std::floor(pt.x() / voxel)),
                       static_cast<std::int64_t>(std::floor(pt.y() / voxel)),
                       static_cast<std::int64_t>(std::floor(pt.z() / voxel))}];
    acc.sum += pt;
    acc.n += 1;
  }
  out.points.reserve(cells.size());
  for (const auto& [key, acc] : cells) {
    out.points.push_back(acc.sum / static_cast<double>(acc.n));
  }
  return out;
}

}  // namespace lidarfuse
