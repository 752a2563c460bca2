#include "lidarfuse/eval.hpp"

#include "lidarfuse/features.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>

namespace lidarfuse::eval {

RigidTransform estimate_world_alignment(const std::vector<Vec3>& pred_positions,
                                        const std::vector<Vec3>& gt_positions) {
  if (pred_positions.size() != gt_positions.size() || pred_positions.size() < 3) {
    throw std::invalid_argument("estimate_world_alignment: need >= 3 paired positions");
  }
  std::vector<std::pair<Vec3, Vec3>> pairs;
  pairs.reserve(pred_positions.size());
  for (std::size_t i = 0; i < pred_positions.size(); ++i) {
    pairs.emplace_back(pred_positions[i], gt_positions[i]);
  }
  try {
    return estimate_transform_svd(pairs);
  } catch (const std::invalid_argument&) {
    throw std::invalid_argument("estimate_world_alignment: alignment underdetermined "
                                "(collinear sensor layout)");
  }
}

double trans_error(const Vec3& predicted, const Vec3& gt) { return (predicted - gt).norm(); }

double rot_error(const Mat3& predicted, const Mat3& gt) {
  return rotation_angle(predicted * gt.transpose());
}

double rmse(const std::vector<double>& errors) {
  if (errors.empty()) throw std::invalid_argument("rmse: empty error list");
  double sum = 0.0;
  for (double e : errors) sum += e * e;
  return std::sqrt(sum / static_cast<double>(errors.size()));
}

MetricsReport evaluate_run(const std::vector<PoseRecord>& predicted,
                           const std::vector<PoseRecord>& gt, bool gt_has_orientation) {
  MetricsReport report;
  report.rotation_evaluated = gt_has_orientation;

  std::map<std::pair<int, int>, const PoseRecord*> gt_index;
  for (const auto& r : gt) gt_index[{r.time_step, r.sensor_id}] = &r;

  // T_coord from the first time step present in both streams for every
  // sensor of that step.
  int first_step = -1;
  for (const auto& r : predicted) {
    if (first_step < 0 || r.time_step < first_step) first_step = r.time_step;
  }
  if (first_step < 0) throw std::invalid_argument("evaluate_run: empty prediction stream");
  std::vector<Vec3> pred_pos, gt_pos;
  for (const auto& r : predicted) {
    if (r.time_step != first_step) continue;
    const auto it = gt_index.find({r.time_step, r.sensor_id});
    if (it == gt_index.end()) continue;
    pred_pos.push_back(r.pose.translation);
    gt_pos.push_back(it->second->pose.translation);
  }
  report.t_coord = estimate_world_alignment(pred_pos, gt_pos);
  const Mat3& r_coord = report.t_coord.rotation;

  std::map<int, std::pair<std::vector<double>, std::vector<double>>> per_sensor;
  for (const auto& r : predicted) {
    const auto it = gt_index.find({r.time_step, r.sensor_id});
    if (it == gt_index.end()) {
      ++report.missing_frames;
      continue;
    }
    FrameError fe;
    fe.time_step = r.time_step;
    fe.sensor_id = r.sensor_id;
    fe.e_trans = trans_error(report.t_coord.apply(r.pose.translation),
                             it->second->pose.translation);
    fe.e_rot = gt_has_orientation
                   ? rot_error(r_coord * r.pose.rotation, it->second->pose.rotation)
                   : 0.0;
    report.frame_errors.push_back(fe);
    per_sensor[r.sensor_id].first.push_back(fe.e_trans);
    per_sensor[r.sensor_id].second.push_back(fe.e_rot);
  }

  double sum_t = 0.0, sum_r = 0.0;
  for (const auto& [sid, errs] : per_sensor) {
    SensorMetrics m;
    m.sensor_id = sid;
    m.rmse_trans = rmse(errs.first);
    m.rmse_rot = gt_has_orientation ? rmse(errs.second) : 0.0;
    m.n_frames = static_cast<int>(errs.first.size());
    report.per_sensor.push_back(m);
    sum_t += m.rmse_trans;
    sum_r += m.rmse_rot;
  }
  if (!report.per_sensor.empty()) {
    report.avg_rmse_trans = sum_t / static_cast<double>(report.per_sensor.size());
    report.avg_rmse_rot = sum_r / static_cast<double>(report.per_sensor.size());
  }
  return report;
}

void write_frame_errors_csv(const std::string& path, const MetricsReport& report,
                            const std::vector<std::pair<int, double>>& runtimes_ms) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_frame_errors_csv: cannot open " + path);
  std::map<int, double> runtime;
  for (const auto& [step, ms] : runtimes_ms) runtime[step] = ms;
  os << std::setprecision(12);
  os << "time_step,sensor_id,e_trans_m,e_rot_rad,runtime_ms\n";
  for (const auto& fe : report.frame_errors) {
    os << fe.time_step << "," << fe.sensor_id << "," << fe.e_trans << ",";
    if (report.rotation_evaluated) os << fe.e_rot;
    os << ",";
    const auto it = runtime.find(fe.time_step);
    if (it != runtime.end()) os << it->second;
    os << "\n";
  }
}

void write_summary_csv(const std::string& path, const std::vector<RunSummary>& rows) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_summary_csv: cannot open " + path);
  os << std::setprecision(12);
  os << "scenario,voxel_size,init_runtime_s,mean_cont_runtime_ms,avg_rmse_trans_cm,"
        "avg_rmse_rot_deg\n";
  for (const auto& r : rows) {
    os << r.scenario << "," << r.voxel_size << "," << r.init_runtime_s << ","
       << r.mean_cont_runtime_ms << "," << r.avg_rmse_trans_cm << ",";
    if (r.rotation_evaluated) {
      os << r.avg_rmse_rot_deg;
    } else {
      os << "---";
    }
    os << "\n";
  }
}

std::vector<RunSummary> read_summary_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("read_summary_csv: cannot open " + path);
  std::vector<RunSummary> rows;
  std::string line;
  bool header = true;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (header) {
      header = false;
      continue;
    }
    std::stringstream ss(line);
    std::string tok;
    std::vector<std::string> vals;
    while (std::getline(ss, tok, ',')) vals.push_back(tok);
    if (vals.size() < 6) throw std::runtime_error("read_summary_csv: malformed row");
    RunSummary r;
    r.scenario = vals[0];
    r.voxel_size = std::stod(vals[1]);
    r.init_runtime_s = std::stod(vals[2]);
    r.mean_cont_runtime_ms = std::stod(vals[3]);
    r.avg_rmse_trans_cm = std::stod(vals[4]);
    r.rotation_evaluated = vals[5] != "---";
    r.avg_rmse_rot_deg = r.rotation_evaluated ? std::stod(vals[5]) : 0.0;
    rows.push_back(r);
  }
  return rows;
}

}  // namespace lidarfuse::eval
