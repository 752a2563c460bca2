#include "lidarfuse/dynafilter.hpp"

#include <algorithm>
#include <cmath>

namespace lidarfuse {

SphericalPoint to_spherical(const Vec3& p) {
  SphericalPoint s;
  s.range = p.norm();
  s.azimuth = std::atan2(p.y(), p.x());
  if (s.azimuth >= M_PI) s.azimuth -= 2.0 * M_PI;
  s.elevation = s.range > 0.0 ? std::asin(std::clamp(p.z() / s.range, -1.0, 1.0)) : 0.0;
  return s;
}

SphericalGrid::SphericalGrid(const std::vector<Vec3>& points, double cell_size)
    : cell_(cell_size) {
  n_az_ = std::max(1, static_cast<int>(std::ceil(2.0 * M_PI / cell_)));
  n_el_ = std::max(1, static_cast<int>(std::ceil(M_PI / cell_)));
  bins_.assign(static_cast<std::size_t>(n_az_) * n_el_, {});
  dirs_.reserve(points.size());
  ranges_.reserve(points.size());
  for (const Vec3& p : points) {
    const SphericalPoint s = to_spherical(p);
    if (s.range <= 0.0) {
      dirs_.push_back(Vec3::UnitX());
      ranges_.push_back(0.0);
      continue;
    }
    dirs_.push_back(p / s.range);
    ranges_.push_back(s.range);
    const int ia =
        std::clamp(static_cast<int>((s.azimuth + M_PI) / (2.0 * M_PI) * n_az_), 0, n_az_ - 1);
    const int ie =
        std::clamp(static_cast<int>((s.elevation + M_PI / 2.0) / M_PI * n_el_), 0, n_el_ - 1);
    bins_[static_cast<std::size_t>(ie) * n_az_ + ia].push_back(
        static_cast<int>(dirs_.size()) - 1);
  }
}

void SphericalGrid::cone_search(const Vec3& dir, double half_angle, std::vector<int>& out) const {
  out.clear();
  if (bins_.empty()) return;
  const SphericalPoint s = to_spherical(dir);
  const double cos_half = std::cos(half_angle);
  const int ie0 =
      std::clamp(static_cast<int>((s.elevation + M_PI / 2.0) / M_PI * n_el_), 0, n_el_ - 1);
  const int el_span = static_cast<int>(std::ceil(half_angle / (M_PI / n_el_))) + 1;
  for (int de = -el_span; de <= el_span; ++de) {
    const int ie = ie0 + de;
    if (ie < 0 || ie >= n_el_) continue;
    // Azimuth spans widen towards the poles.
    const double el_center = (ie + 0.5) / n_el_ * M_PI - M_PI / 2.0;
    const double el_worst = std::min(std::abs(el_center) + M_PI / n_el_, M_PI / 2.0);
    const double cos_el = std::max(std::cos(el_worst), 0.05);
    const double az_cell = 2.0 * M_PI / n_az_;
    const int az_span = static_cast<int>(std::ceil(half_angle / (az_cell * cos_el))) + 1;
    const int ia0 =
        std::clamp(static_cast<int>((s.azimuth + M_PI) / (2.0 * M_PI) * n_az_), 0, n_az_ - 1);
    const int n_cells = std::min(2 * az_span + 1, n_az_);
    for (int k = 0; k < n_cells; ++k) {
      int ia = (ia0 - az_span + k) % n_az_;
      if (ia < 0) ia += n_az_;
      for (int idx : bins_[static_cast<std::size_t>(ie) * n_az_ + ia]) {
        if (dirs_[idx].dot(dir) >= cos_half) out.push_back(idx);
      }
    }
  }
}

ChangeDetectionResult detect_changes(const SphericalGrid& reference_grid, const PointCloud& query,
                                     const RigidTransform& prealign, double cone_half_angle,
                                     double range_threshold) {
  ChangeDetectionResult res;
  std::vector<Vec3> q_pts(query.size());
  for (std::size_t i = 0; i < query.size(); ++i) q_pts[i] = prealign.apply(query.points[i]);

  std::vector<int> cone;
  for (std::size_t i = 0; i < q_pts.size(); ++i) {
    const double range = q_pts[i].norm();
    if (range <= 0.0) {
      ++res.unknown;
      continue;
    }
    const Vec3 dir = q_pts[i] / range;
    reference_grid.cone_search(dir, cone_half_angle, cone);
    if (cone.empty()) {
      ++res.unknown;
      continue;
    }
    bool all_farther = true;
    for (int r : cone) {
      if (reference_grid.ranges()[r] <= range + range_threshold) {
        all_farther = false;
        break;
      }
    }
    if (all_farther) res.additions.push_back(static_cast<int>(i));
  }

  // Subtractions: reference points whose cone now only contains longer rays.
  const SphericalGrid query_grid(q_pts, cone_half_angle);
  for (std::size_t r = 0; r < reference_grid.ranges().size(); ++r) {
    const double range = reference_grid.ranges()[r];
    if (range <= 0.0) {
      ++res.unknown;
      continue;
    }
    query_grid.cone_search(reference_grid.directions()[r], cone_half_angle, cone);
    if (cone.empty()) {
      ++res.unknown;
      continue;
    }
    bool all_farther = true;
    for (int q : cone) {
      if (query_grid.ranges()[q] <= range + range_threshold) {
        all_farther = false;
        break;
      }
    }
    if (all_farther) res.subtractions.push_back(static_cast<int>(r));
  }
  return res;
}

ChangeDetectionResult detect_changes(const PointCloud& reference, const PointCloud& query,
                                     const RigidTransform& prealign, double cone_half_angle,
                                     double range_threshold) {
  const SphericalGrid grid(reference.points, cone_half_angle);
  return detect_changes(grid, query, prealign, cone_half_angle, range_threshold);
}

namespace {

std::pair<std::int64_t, std::int64_t> cell_of(const Vec3& p, double cell_size) {
  return {static_cast<std::int64_t>(std::floor(p.x() / cell_size)),
          static_cast<std::int64_t>(std::floor(p.y() / cell_size))};
}

}  // namespace

double BackgroundModel::weight_at(const Vec3& p) const {
  const auto it = cells.find(cell_of(p, cell_size));
  return it == cells.end() ? 0.0 : it->second;
}

void update_background_model(BackgroundModel& m, const PointCloud& dynamic_points) {
  for (auto it = m.cells.begin(); it != m.cells.end();) {
    it->second *= m.attenuation;
    if (it->second < 1e-4) {
      it = m.cells.erase(it);
    } else {
      ++it;
    }
  }
  std::map<std::pair<std::int64_t, std::int64_t>, bool> hit;
  for (const Vec3& p : dynamic_points.points) hit[cell_of(p, m.cell_size)] = true;
  for (const auto& [key, unused] : hit) {
    double& w = m.cells[key];
    w = std::min(w + m.insertion_weight, 1.0);
  }
}

std::pair<PointCloud, PointCloud> split_static_dynamic(const PointCloud& c,
                                                       const BackgroundModel& m,
                                                       const RigidTransform& prealign,
                                                       double weight_threshold) {
  std::vector<int> stat, dyn;
  stat.reserve(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    if (m.weight_at(prealign.apply(c.points[i])) >= weight_threshold) {
      dyn.push_back(static_cast<int>(i));
    } else {
      stat.push_back(static_cast<int>(i));
    }
  }
  return {select_points(c, stat), select_points(c, dyn)};
}

void export_model_csv(const BackgroundModel& m, std::ostream& os) {
  os << "x,y,weight\n";
  for (const auto& [key, w] : m.cells) {
    os << (static_cast<double>(key.first) + 0.5) * m.cell_size << ","
       << (static_cast<double>(key.second) + 0.5) * m.cell_size << "," << w << "\n";
  }
}

}  // namespace lidarfuse
