#include "lidarfuse/eval.hpp"
#include "lidarfuse/pipeline.hpp"
#include "lidarfuse/sim.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "json.hpp"

namespace fs = std::filesystem;
using namespace lidarfuse;

namespace {

int cmd_simulate(const std::string& config_path, std::optional<std::uint64_t> seed,
                 const std::string& output) {
  sim::ScenarioConfig cfg = scenario_config_from_json(config_path);
  if (seed) cfg.seed = *seed;
  const auto summary = sim::run_scenario(cfg, output);
  std::cout << "dataset: " << summary.manifest_path << "\n"
            << "frames: " << summary.n_frames << " x " << summary.n_sensors << " sensors\n";
  if (summary.pendulum_clamp_events > 0) {
    std::cout << "pendulum clamp events: " << summary.pendulum_clamp_events << "\n";
  }
  return 0;
}

int cmd_register(const std::string& dataset, const std::string& config_path,
                 std::optional<double> voxel, std::optional<int> window, bool no_dynamic_filter,
                 std::optional<std::uint64_t> seed, std::optional<int> threads,
                 const std::string& output, bool export_fused) {
  RegistrationConfig cfg;
  if (!config_path.empty()) cfg = registration_config_from_json(config_path);
  if (voxel) cfg.voxel_size = *voxel;
  if (window) cfg.window = *window;
  if (no_dynamic_filter) cfg.dynamic_filter = false;
  if (seed) cfg.seed = *seed;
  if (threads) cfg.threads = *threads;
  if (export_fused) cfg.export_fused = true;

  std::string manifest = dataset;
  if (fs::is_directory(dataset)) manifest = (fs::path(dataset) / "manifest.json").string();
  const auto run = register_dataset(manifest, cfg, output);
  std::cout << "registered " << run.runtimes_ms.size() + 1 << " frames ("
            << run.sync.dropped_groups << " dropped groups, " << run.sync.missing_clouds
            << " missing clouds)\n"
            << "initial registration: " << run.init_runtime_s << " s\n"
            << "continuous mean: " << run.mean_cont_runtime_ms << " ms/frame\n";
  return 0;
}

int cmd_evaluate(const std::string& poses_path, const std::string& gt_path,
                 const std::string& runtimes_path, const std::string& run_json,
                 const std::string& scenario, std::optional<double> voxel,
                 const std::string& output) {
  const auto predicted = read_pose_csv(poses_path);
  bool gt_oriented = true;
  const auto gt = read_pose_csv(gt_path, &gt_oriented);
  const auto report = eval::evaluate_run(predicted, gt, gt_oriented);

  std::vector<std::pair<int, double>> runtimes;
  if (!runtimes_path.empty()) {
    std::ifstream is(runtimes_path);
    std::string line;
    std::getline(is, line);  // header
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      const auto comma = line.find(',');
      runtimes.emplace_back(std::stoi(line.substr(0, comma)),
                            std::stod(line.substr(comma + 1)));
    }
  }

  eval::RunSummary summary;
  summary.scenario = scenario.empty() ? "run" : scenario;
  summary.voxel_size = voxel.value_or(0.0);
  if (!run_json.empty()) {
    std::ifstream is(run_json);
    nlohmann::json j;
    is >> j;
    if (summary.scenario == "run") summary.scenario = j.value("dataset_id", "run");
    if (!voxel) summary.voxel_size = j.value("voxel_size", 0.0);
    summary.init_runtime_s = j.value("init_runtime_s", 0.0);
    summary.mean_cont_runtime_ms = j.value("mean_cont_runtime_ms", 0.0);
  }
  if (!runtimes.empty() && summary.mean_cont_runtime_ms == 0.0) {
    double sum = 0.0;
    for (const auto& [step, ms] : runtimes) sum += ms;
    summary.mean_cont_runtime_ms = sum / runtimes.size();
  }
  summary.avg_rmse_trans_cm = report.avg_rmse_trans * 100.0;
  summary.avg_rmse_rot_deg = report.avg_rmse_rot * 180.0 / M_PI;
  summary.rotation_evaluated = report.rotation_evaluated;

  fs::create_directories(output.empty() ? "." : output);
  const fs::path out(output.empty() ? "." : output);
  eval::write_frame_errors_csv((out / "frame_errors.csv").string(), report, runtimes);
  eval::write_summary_csv((out / "summary.csv").string(), {summary});

  std::cout << "avg RMSE trans: " << summary.avg_rmse_trans_cm << " cm\n";
  if (report.rotation_evaluated) {
    std::cout << "avg RMSE rot: " << summary.avg_rmse_rot_deg << " deg\n";
  } else {
    std::cout << "avg RMSE rot: --- (no GT orientations)\n";
  }
  if (report.missing_frames > 0) {
    std::cout << "missing frames excluded: " << report.missing_frames << "\n";
  }
  return 0;
}

int cmd_report(const std::string& summary_path) {
  const auto rows = eval::read_summary_csv(summary_path);
  std::printf("%-24s %10s %10s %12s %10s\n", "Scenario (voxel [m])", "Init [s]", "Cont. [ms]",
              "Trans. [cm]", "Rot. [deg]");
  for (const auto& r : rows) {
    char label[64];
    std::snprintf(label, sizeof(label), "%s (%g)", r.scenario.c_str(), r.voxel_size);
    if (r.rotation_evaluated) {
      std::printf("%-24s %10.2f %10.1f %12.1f %10.3f\n", label, r.init_runtime_s,
                  r.mean_cont_runtime_ms, r.avg_rmse_trans_cm, r.avg_rmse_rot_deg);
    } else {
      std::printf("%-24s %10.2f %10.1f %12.1f %10s\n", label, r.init_runtime_s,
                  r.mean_cont_runtime_ms, r.avg_rmse_trans_cm, "---");
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-LiDAR point cloud fusion toolkit"};
  app.require_subcommand(1);

  std::string config, dataset, output = "out", poses, gt, runtimes, run_json, scenario,
              summary_path;
  std::optional<double> voxel;
  std::optional<int> window, threads;
  std::optional<std::uint64_t> seed;
  bool no_dynamic_filter = false, export_fused = false;

  auto* sim_cmd = app.add_subcommand("simulate", "Generate a synthetic dataset");
  sim_cmd->add_option("--config", config, "Scenario config (JSON)")->required();
  sim_cmd->add_option("--seed", seed, "Override the scenario seed");
  sim_cmd->add_option("--output", output, "Output directory");

  auto* reg_cmd = app.add_subcommand("register", "Run initial + continuous registration");
  reg_cmd->add_option("--dataset", dataset, "Dataset directory or manifest path")->required();
  reg_cmd->add_option("--config", config, "Registration config (JSON)");
  reg_cmd->add_option("--voxel-size", voxel, "Continuous voxel size [m]");
  reg_cmd->add_option("--window", window, "Sliding window length k_w");
  reg_cmd->add_flag("--no-dynamic-filter", no_dynamic_filter, "Disable dynamic-object removal");
  reg_cmd->add_option("--seed", seed, "RANSAC seed");
  reg_cmd->add_option("--threads", threads, "Worker threads");
  reg_cmd->add_option("--output", output, "Output directory");
  reg_cmd->add_flag("--export-fused", export_fused, "Write fused PLY per frame");

  auto* eval_cmd = app.add_subcommand("evaluate", "Compare predicted poses against GT");
  eval_cmd->add_option("--poses", poses, "Predicted poses CSV")->required();
  eval_cmd->add_option("--gt", gt, "Ground-truth CSV")->required();
  eval_cmd->add_option("--runtimes", runtimes, "Per-frame runtime CSV");
  eval_cmd->add_option("--run-json", run_json, "run.json written by register");
  eval_cmd->add_option("--scenario", scenario, "Scenario label");
  eval_cmd->add_option("--voxel-size", voxel, "Voxel size label");
  eval_cmd->add_option("--output", output, "Output directory");

  auto* rep_cmd = app.add_subcommand("report", "Print a summary table");
  rep_cmd->add_option("--summary", summary_path, "summary.csv path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n" << app.help() << "\n";
    return 1;
  }

  try {
    if (sim_cmd->parsed()) return cmd_simulate(config, seed, output);
    if (reg_cmd->parsed()) {
      return cmd_register(dataset, config, voxel, window, no_dynamic_filter, seed, threads,
                          output, export_fused);
    }
    if (eval_cmd->parsed()) {
      return cmd_evaluate(poses, gt, runtimes, run_json, scenario, voxel, output);
    }
    if (rep_cmd->parsed()) return cmd_report(summary_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
