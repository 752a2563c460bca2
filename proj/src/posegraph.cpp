#include "lidarfuse/posegraph.hpp"

#include "lidarfuse/parallel.hpp"
#include "lidarfuse/se3.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <stdexcept>

namespace lidarfuse {

SlidingWindow::SlidingWindow(int k_w, int n_sensors) : k_w_(k_w), n_sensors_(n_sensors) {
  if (k_w < 2) throw std::invalid_argument("SlidingWindow: k_w must be >= 2");
}

void SlidingWindow::set_node(const NodeKey& key, const RigidTransform& pose) {
  nodes_[key] = pose;
  newest_step_ = std::max(newest_step_, key.time_step);
}

const RigidTransform& SlidingWindow::pose(const NodeKey& key) const {
  const auto it = nodes_.find(key);
  if (it == nodes_.end()) throw std::out_of_range("SlidingWindow: unknown node");
  return it->second;
}

void SlidingWindow::advance(int n, const std::vector<PoseEdge>& measurements) {
  // Seed the new nodes from the previous poses and the prev-frame
  // measurements; Table I fallback (identity motion) when missing.
  for (int i = 0; i < n_sensors_; ++i) {
    const NodeKey cur{i, n};
    const NodeKey prev{i, n - 1};
    const auto prev_it = nodes_.find(prev);
    const RigidTransform prev_pose =
        prev_it != nodes_.end() ? prev_it->second : RigidTransform::identity();
    const PoseEdge* prev_edge = nullptr;
    for (const auto& e : measurements) {
      if (e.category == EdgeCategory::prev_frame && e.from == cur && e.to == prev) {
        prev_edge = &e;
        break;
      }
    }
    if (prev_edge) {
      nodes_[cur] = compose(prev_pose, prev_edge->measurement);
    } else {
      nodes_[cur] = prev_pose;
      ++fallback_events_;
    }
  }
  newest_step_ = n;

  for (const auto& e : measurements) {
    if (nodes_.count(e.from) && nodes_.count(e.to)) edges_.push_back(e);
  }

  const int window_start = n - k_w_ + 1;
  if (window_start > 0) {
    for (auto it = nodes_.begin(); it != nodes_.end();) {
      if (it->first.time_step != 0 && it->first.time_step < window_start) {
        it = nodes_.erase(it);
      } else {
        ++it;
      }
    }
    std::erase_if(edges_, [&](const PoseEdge& e) {
      return !nodes_.count(e.from) || !nodes_.count(e.to);
    });
    // t0 has left the window: anchors are frozen from here on.
    for (int i = 0; i < n_sensors_; ++i) pinned_.insert(NodeKey{i, 0});
  }

  if (nodes_.size() > static_cast<std::size_t>(n_sensors_ * (k_w_ + 1))) {
    throw std::logic_error("SlidingWindow: node count exceeds n_L * (k_w + 1)");
  }
}

Vec6 edge_residual(const PoseEdge& e, const RigidTransform& from, const RigidTransform& to,
                   Mat6* jacobian_from, Mat6* jacobian_to) {
  const RigidTransform rel = compose(invert(to), from);
  const RigidTransform err = compose(invert(e.measurement), rel);
  const Vec6 r = se3::log(err);
  if (jacobian_from) *jacobian_from = se3::right_jacobian_inv(r);
  if (jacobian_to) {
    *jacobian_to = -se3::left_jacobian_inv(r) * se3::adjoint(invert(e.measurement));
  }
  return r;
}

namespace {

double huber_cost(double s, double delta) {
  if (s <= delta) return 0.5 * s * s;
  return delta * (s - 0.5 * delta);
}

double graph_cost(const std::map<NodeKey, RigidTransform>& poses,
                  const std::vector<PoseEdge>& edges, double huber_delta) {
  double cost = 0.0;
  for (const auto& e : edges) {
    const Vec6 r = edge_residual(e, poses.at(e.from), poses.at(e.to));
    const double s = std::sqrt(r.dot(e.information * r));
    cost += huber_cost(s, huber_delta);
  }
  return cost;
}

}  // namespace

OptimizeReport optimize(SlidingWindow& w, double huber_delta, int max_iterations) {
  // Every free node must reach a pinned node through edges, otherwise the
  // gauge is undetermined.
  {
    std::set<NodeKey> reached = w.pinned();
    std::deque<NodeKey> queue(reached.begin(), reached.end());
    while (!queue.empty()) {
      const NodeKey k = queue.front();
      queue.pop_front();
      for (const auto& e : w.edges()) {
        for (const NodeKey& other : {e.from == k ? e.to : NodeKey{-1, -1},
                                     e.to == k ? e.from : NodeKey{-1, -1}}) {
          if (other.sensor_id >= 0 && w.nodes().count(other) && !reached.count(other)) {
            reached.insert(other);
            queue.push_back(other);
          }
        }
      }
    }
    for (const auto& [key, pose] : w.nodes()) {
      if (!reached.count(key)) {
        throw std::runtime_error("optimize: graph not connected to a pinned node (sensor " +
                                 std::to_string(key.sensor_id) + ", step " +
                                 std::to_string(key.time_step) + ")");
      }
    }
  }

  std::vector<NodeKey> free_keys;
  std::map<NodeKey, int> index;
  for (const auto& [key, pose] : w.nodes()) {
    if (!w.pinned().count(key)) {
      index[key] = static_cast<int>(free_keys.size());
      free_keys.push_back(key);
    }
  }

  OptimizeReport report;
  std::map<NodeKey, RigidTransform> poses = w.nodes();
  report.initial_cost = graph_cost(poses, w.edges(), huber_delta);
  report.final_cost = report.initial_cost;
  if (free_keys.empty() || w.edges().empty()) {
    report.converged = true;
    return report;
  }

  const int dim = 6 * static_cast<int>(free_keys.size());
  double lambda = 1e-6;
  double cost = report.initial_cost;

  for (int iter = 0; iter < max_iterations; ++iter) {
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(dim, dim);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(dim);
    for (const auto& e : w.edges()) {
      Mat6 jf, jt;
      const Vec6 r = edge_residual(e, poses.at(e.from), poses.at(e.to), &jf, &jt);
      const double s = std::sqrt(std::max(r.dot(e.information * r), 0.0));
      const double wgt = (s <= huber_delta || s == 0.0) ? 1.0 : huber_delta / s;
      const Mat6 lam = wgt * e.information;
      const auto fi = index.find(e.from);
      const auto ti = index.find(e.to);
      if (fi != index.end()) {
        h.block<6, 6>(6 * fi->second, 6 * fi->second) += jf.transpose() * lam * jf;
        b.segment<6>(6 * fi->second) += jf.transpose() * lam * r;
      }
      if (ti != index.end()) {
        h.block<6, 6>(6 * ti->second, 6 * ti->second) += jt.transpose() * lam * jt;
        b.segment<6>(6 * ti->second) += jt.transpose() * lam * r;
      }
      if (fi != index.end() && ti != index.end()) {
        h.block<6, 6>(6 * fi->second, 6 * ti->second) += jf.transpose() * lam * jt;
        h.block<6, 6>(6 * ti->second, 6 * fi->second) += jt.transpose() * lam * jf;
      }
    }

    bool accepted = false;
    double step_norm = 0.0;
    for (int attempt = 0; attempt < 8; ++attempt) {
      Eigen::MatrixXd hd = h;
      for (int i = 0; i < dim; ++i) hd(i, i) += lambda * std::max(h(i, i), 1e-12);
      const Eigen::VectorXd delta = hd.ldlt().solve(-b);
      std::map<NodeKey, RigidTransform> trial = poses;
      for (std::size_t k = 0; k < free_keys.size(); ++k) {
        const Vec6 d = delta.segment<6>(6 * static_cast<int>(k));
        trial[free_keys[k]] = compose(trial[free_keys[k]], se3::exp(d));
      }
      const double trial_cost = graph_cost(trial, w.edges(), huber_delta);
      if (trial_cost <= cost) {
        poses = std::move(trial);
        step_norm = delta.lpNorm<Eigen::Infinity>();
        lambda = std::max(lambda / 3.0, 1e-12);
        accepted = true;
        report.iterations = iter + 1;
        const double improvement = cost - trial_cost;
        cost = trial_cost;
        if (step_norm < 1e-12 || improvement <= 1e-16 * (1.0 + cost)) {
          report.converged = true;
        }
        break;
      }
      lambda *= 10.0;
    }
    if (!accepted) {
      report.converged = true;  // stalled: no descent direction left
      break;
    }
    if (report.converged) break;
  }
  if (report.iterations >= max_iterations) report.converged = report.converged || false;

  report.final_cost = cost;
  for (const auto& key : free_keys) {
    w.set_node(key, poses.at(key));
  }
  return report;
}

std::vector<RigidTransform> build_initial_graph(
    const std::map<std::pair<int, int>, RigidTransform>& pairwise,
    const std::map<std::pair<int, int>, double>& edge_weights, int n_sensors) {
  // Reachability and seed poses by chaining measurements from sensor 0.
  std::vector<int> order;
  std::vector<RigidTransform> seed(n_sensors);
  std::vector<bool> reached(n_sensors, false);
  reached[0] = true;
  order.push_back(0);
  for (std::size_t head = 0; head < order.size(); ++head) {
    const int j = order[head];
    for (const auto& [key, m] : pairwise) {
      const auto [a, b] = key;  // measurement maps a-frame -> b-frame
      if (b == j && !reached[a]) {
        seed[a] = compose(seed[j], m);
        reached[a] = true;
        order.push_back(a);
      } else if (a == j && !reached[b]) {
        seed[b] = compose(seed[j], invert(m));
        reached[b] = true;
        order.push_back(b);
      }
    }
  }
  std::string unreachable;
  for (int i = 0; i < n_sensors; ++i) {
    if (!reached[i]) unreachable += (unreachable.empty() ? "" : ", ") + std::to_string(i);
  }
  if (!unreachable.empty()) {
    throw std::runtime_error("build_initial_graph: sensors unreachable from L0: " + unreachable);
  }

  SlidingWindow graph(2, n_sensors);
  for (int i = 0; i < n_sensors; ++i) graph.set_node({i, 0}, seed[i]);
  graph.pin({0, 0});
  for (const auto& [key, m] : pairwise) {
    PoseEdge e;
    e.from = {key.first, 0};
    e.to = {key.second, 0};
    e.measurement = m;
    const auto wit = edge_weights.find(key);
    e.information = Mat6::Identity() * (wit != edge_weights.end() ? std::max(wit->second, 1.0) : 1.0);
    e.category = EdgeCategory::cross_sensor;
    graph.add_edge(e);
  }
  optimize(graph, std::numeric_limits<double>::infinity(), 100);

  std::vector<RigidTransform> out(n_sensors);
  for (int i = 0; i < n_sensors; ++i) out[i] = graph.pose({i, 0});
  return out;
}

std::vector<PoseEdge> measure_edges(const FrameInputs& in, const EdgeMeasurementConfig& cfg) {
  struct Task {
    PoseEdge proto;
    const GicpCloud* src;
    const GicpCloud* tgt;
    RigidTransform init;
  };
  std::vector<Task> tasks;
  const int n = static_cast<int>(in.current.size());
  const int step = in.time_step;

  for (int i = 0; i < n; ++i) {
    if (!in.current[i]) continue;
    if (i < static_cast<int>(in.previous.size()) && in.previous[i]) {
      Task t;
      t.proto.from = {i, step};
      t.proto.to = {i, step - 1};
      t.proto.category = EdgeCategory::prev_frame;
      t.src = in.current[i];
      t.tgt = in.previous[i];
      t.init = (i < static_cast<int>(in.prev_motion.size()) && in.prev_motion[i])
                   ? *in.prev_motion[i]
                   : RigidTransform::identity();
      tasks.push_back(t);
    }
    if (i < static_cast<int>(in.first.size()) && in.first[i]) {
      Task t;
      t.proto.from = {i, step};
      t.proto.to = {i, 0};
      t.proto.category = EdgeCategory::first_frame;
      t.src = in.current[i];
      t.tgt = in.first[i];
      t.init = RigidTransform::identity();
      tasks.push_back(t);
    }
  }
  if (cfg.cross_sensor_due) {
    for (int i = 1; i < n; ++i) {
      for (int j = 0; j < i; ++j) {
        if (!in.current[i] || !in.current[j]) continue;
        Task t;
        t.proto.from = {i, step};
        t.proto.to = {j, step};
        t.proto.category = EdgeCategory::cross_sensor;
        t.src = in.current[i];
        t.tgt = in.current[j];
        const auto ci = in.cross_init.find({i, j});
        if (ci != in.cross_init.end()) {
          t.init = ci->second;
        } else {
          const auto cf = in.cross_fallback.find({i, j});
          t.init = cf != in.cross_fallback.end() ? cf->second : RigidTransform::identity();
        }
        tasks.push_back(t);
      }
    }
  }

  std::vector<std::optional<PoseEdge>> results(tasks.size());
  parallel_for(0, static_cast<int>(tasks.size()), cfg.threads, [&](int k) {
    const Task& t = tasks[k];
    const GicpResult r = gicp(*t.src, *t.tgt, t.init, cfg.gicp);
    if (!r.converged) return;
    PoseEdge e = t.proto;
    e.measurement = r.transform;
    e.information = Mat6::Identity() * static_cast<double>(std::max(r.correspondences, 1));
    results[k] = e;
  });

  std::vector<PoseEdge> edges;
  edges.reserve(tasks.size());
  for (const auto& r : results) {
    if (r) edges.push_back(*r);
  }
  return edges;
}

}  // namespace lidarfuse
