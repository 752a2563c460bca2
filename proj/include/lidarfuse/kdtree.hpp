#pragma once

#include "lidarfuse/geom.hpp"

#include <algorithm>
#include <cstddef>
#include <limits>
#include <vector>

namespace lidarfuse {

/// Bucketed kd-tree over 3D points. Built once per cloud, queried many times
/// (correspondence search, neighborhood statistics). Indices returned are
/// indices into the vector the tree was built from.
class KdTree3 {
 public:
  struct Hit {
    int index = -1;
    double dist2 = std::numeric_limits<double>::infinity();
  };

  KdTree3() = default;
  explicit KdTree3(const std::vector<Vec3>& points) { build(points); }

  void build(const std::vector<Vec3>& points) {
    pts_ = points;
    order_.resize(pts_.size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = static_cast<int>(i);
    nodes_.clear();
    if (!pts_.empty()) {
      nodes_.reserve(2 * pts_.size() / kLeafSize + 4);
      build_node(0, static_cast<int>(pts_.size()));
    }
  }

  std::size_t size() const { return pts_.size(); }

  /// Nearest neighbor. max_dist caps the search radius (pass infinity for an
  /// unbounded query); returns index -1 when nothing lies within it.
  Hit nearest(const Vec3& q, double max_dist = std::numeric_limits<double>::infinity()) const {
    Hit best;
    best.dist2 = max_dist * max_dist;
    if (best.dist2 < std::numeric_limits<double>::infinity()) {
      best.dist2 = std::nextafter(best.dist2, std::numeric_limits<double>::infinity());
    }
    if (!nodes_.empty()) nearest_rec(0, q, best);
    if (best.index < 0) best.dist2 = std::numeric_limits<double>::infinity();
    return best;
  }

  /// k nearest neighbors, closest first. Appends (index, dist2) pairs to out.
  void knn(const Vec3& q, int k, std::vector<Hit>& out) const {
    out.clear();
    if (nodes_.empty() || k <= 0) return;
    knn_rec(0, q, k, out);
    std::sort_heap(out.begin(), out.end(), heap_cmp);
  }

  /// All points with |p - q| <= radius. Appends indices to out (unsorted).
  void radius_search(const Vec3& q, double radius, std::vector<int>& out) const {
    out.clear();
    if (nodes_.empty()) return;
    radius_rec(0, q, radius * radius, out);
  }

 private:
  static constexpr int kLeafSize = 12;

  struct Node {
    int left = -1, right = -1;
    int begin = 0, end = 0;  // leaf range into order_
    int dim = 0;
    double split = 0.0;
  };

  static bool heap_cmp(const Hit& a, const Hit& b) { return a.dist2 < b.dist2; }

  int build_node(int begin, int end) {
    const int node_id = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    if (end - begin <= kLeafSize) {
      nodes_[node_id].begin = begin;
      nodes_[node_id].end = end;
      return node_id;
    }
    Vec3 lo = pts_[order_[begin]], hi = lo;
    for (int i = begin + 1; i < end; ++i) {
      lo = lo.cwiseMin(pts_[order_[i]]);
      hi = hi.cwiseMax(pts_[order_[i]]);
    }
    int dim = 0;
    (hi - lo).maxCoeff(&dim);
    const int mid = (begin + end) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](int a, int b) { return pts_[a][dim] < pts_[b][dim]; });
    nodes_[node_id].dim = dim;
    nodes_[node_id].split = pts_[order_[mid]][dim];
    const int left = build_node(begin, mid);
    const int right = build_node(mid, end);
    nodes_[node_id].left = left;
    nodes_[node_id].right = right;
    return node_id;
  }

  void nearest_rec(int node_id, const Vec3& q, Hit& best) const {
    const Node& n = nodes_[node_id];
    if (n.left < 0) {
      for (int i = n.begin; i < n.end; ++i) {
        const double d2 = (pts_[order_[i]] - q).squaredNorm();
        if (d2 < best.dist2) {
          best.dist2 = d2;
          best.index = order_[i];
        }
      }
      return;
    }
    const double diff = q[n.dim] - n.split;
    const int near = diff < 0.0 ? n.left : n.right;
    const int far = diff < 0.0 ? n.right : n.left;
    nearest_rec(near, q, best);
    if (diff * diff < best.dist2) nearest_rec(far, q, best);
  }

  void knn_rec(int node_id, const Vec3& q, int k, std::vector<Hit>& heap) const {
    const Node& n = nodes_[node_id];
    if (n.left < 0) {
      for (int i = n.begin; i < n.end; ++i) {
        const double d2 = (pts_[order_[i]] - q).squaredNorm();
        if (static_cast<int>(heap.size()) < k) {
          heap.push_back({order_[i], d2});
          std::push_heap(heap.begin(), heap.end(), heap_cmp);
        } else if (d2 < heap.front().dist2) {
          std::pop_heap(heap.begin(), heap.end(), heap_cmp);
          heap.back() = {order_[i], d2};
          std::push_heap(heap.begin(), heap.end(), heap_cmp);
        }
      }
      return;
    }
    const double diff = q[n.dim] - n.split;
    const int near = diff < 0.0 ? n.left : n.right;
    const int far = diff < 0.0 ? n.right : n.left;
    knn_rec(near, q, k, heap);
    const double worst = static_cast<int>(heap.size()) < k
                             ? std::numeric_limits<double>::infinity()
                             : heap.front().dist2;
    if (diff * diff < worst) knn_rec(far, q, k, heap);
  }

  void radius_rec(int node_id, const Vec3& q, double r2, std::vector<int>& out) const {
    const Node& n = nodes_[node_id];
    if (n.left < 0) {
      for (int i = n.begin; i < n.end; ++i) {
        if ((pts_[order_[i]] - q).squaredNorm() <= r2) out.push_back(order_[i]);
      }
      return;
    }
    const double diff = q[n.dim] - n.split;
    const int near = diff < 0.0 ? n.left : n.right;
    const int far = diff < 0.0 ? n.right : n.left;
    radius_rec(near, q, r2, out);
    if (diff * diff <= r2) radius_rec(far, q, r2, out);
  }

  std::vector<Vec3> pts_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
};

}  // namespace lidarfuse
