#include "lidarfuse/pipeline.hpp"

#include "lidarfuse/eval.hpp"

#include "doctest.h"
#include "test_helpers.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

using namespace lidarfuse;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* name) {
  const auto dir = fs::temp_directory_path() / "lidarfuse_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::vector<StreamInfo> make_streams(int n_sensors, int n_frames, double period,
                                     const std::vector<double>& offsets) {
  std::vector<StreamInfo> streams(n_sensors);
  for (int i = 0; i < n_sensors; ++i) {
    streams[i].sensor_id = i;
    for (int f = 0; f < n_frames; ++f) {
      streams[i].frames.push_back({"", f * period + offsets[i]});
    }
  }
  return streams;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(LIDARFUSE_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("frame file round trip") {
  const auto dir = temp_dir("framefile");
  std::mt19937_64 rng(111);
  PointCloud c = test::random_cloud(rng, 321, 40.0);
  c.sensor_id = 2;
  c.timestamp = 17.125;
  const std::string path = (dir / "frame.lfrm").string();
  write_frame_file(path, c);
  const PointCloud back = read_frame_file(path);
  CHECK(back.sensor_id == 2);
  CHECK(back.timestamp == 17.125);
  REQUIRE(back.size() == c.size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    // storage is f32 per component
    CHECK((back.points[i] - c.points[i]).cwiseAbs().maxCoeff() < 1e-5);
  }

  // layout check: magic + fixed header sizes
  const std::string raw = slurp(path);
  REQUIRE(raw.size() == 4u + 2u + 2u + 8u + 4u + c.size() * 12u);
  CHECK(raw.substr(0, 4) == "LFRM");
}

TEST_CASE("manifest round trip") {
  const auto dir = temp_dir("manifest");
  FrameManifest m;
  m.dataset_id = "test_ds";
  m.n_sensors = 2;
  m.sample_rate = 20.0;
  m.angular_resolution_deg = 0.7;
  m.gt_path = "gt.csv";
  m.streams.resize(2);
  for (int i = 0; i < 2; ++i) {
    m.streams[i].sensor_id = i;
    m.streams[i].frames.push_back({"frames/a.lfrm", 0.01 * i});
  }
  const std::string path = (dir / "manifest.json").string();
  write_manifest(path, m);
  const FrameManifest back = read_manifest(path);
  CHECK(back.dataset_id == "test_ds");
  CHECK(back.n_sensors == 2);
  CHECK(back.sample_rate == 20.0);
  CHECK(back.angular_resolution_deg == 0.7);
  CHECK(back.gt_path == "gt.csv");
  REQUIRE(back.streams.size() == 2);
  CHECK(back.streams[1].frames[0].timestamp == 0.01);
  CHECK(back.directory == dir.string());
}

TEST_CASE("pose csv round trip with and without orientation") {
  const auto dir = temp_dir("posecsv");
  std::mt19937_64 rng(112);
  std::vector<PoseRecord> recs;
  for (int n = 0; n < 3; ++n) {
    for (int i = 0; i < 2; ++i) recs.push_back({n, i, test::random_transform(rng)});
  }
  const std::string path = (dir / "poses.csv").string();
  write_pose_csv(path, recs);
  bool oriented = false;
  const auto back = read_pose_csv(path, &oriented);
  CHECK(oriented);
  REQUIRE(back.size() == recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) {
    CHECK(back[i].time_step == recs[i].time_step);
    CHECK(back[i].sensor_id == recs[i].sensor_id);
    CHECK(test::max_abs_diff(back[i].pose, recs[i].pose) < 1e-12);
  }

  const std::string path2 = (dir / "positions.csv").string();
  write_pose_csv(path2, recs, /*with_orientation=*/false);
  const auto back2 = read_pose_csv(path2, &oriented);
  CHECK_FALSE(oriented);
  CHECK(back2.size() == recs.size());
}

TEST_CASE("ply export") {
  const auto dir = temp_dir("ply");
  FusedCloud fused;
  fused.points = {{1, 2, 3}, {4, 5, 6}};
  fused.sensor_ids = {0, 3};
  const std::string path = (dir / "frame.ply").string();
  write_ply(path, fused);
  const std::string content = slurp(path);
  CHECK(content.find("ply\nformat ascii 1.0\n") == 0);
  CHECK(content.find("element vertex 2") != std::string::npos);
  CHECK(content.find("property int sensor_id") != std::string::npos);
  CHECK(content.find("4 5 6 3") != std::string::npos);
}

TEST_CASE("synchronize groups identical clocks one to one") {
  const auto streams = make_streams(3, 10, 0.05, {0.0, 0.0, 0.0});
  SynchronizeStats stats;
  const auto groups = synchronize(streams, 20.0, false, &stats);
  REQUIRE(groups.size() == 10);
  CHECK(stats.dropped_groups == 0);
  CHECK(stats.missing_clouds == 0);
  for (const auto& g : groups) {
    for (int i = 0; i < 3; ++i) CHECK(g.items[i] == g.time_step);
  }
}

TEST_CASE("synchronize tolerates a half-period offset at 20 Hz") {
  const auto streams = make_streams(2, 10, 0.05, {0.0, 0.025});
  const auto groups = synchronize(streams, 20.0, false);
  REQUIRE(groups.size() == 10);
  for (const auto& g : groups) CHECK(g.items[1] >= 0);
}

TEST_CASE("synchronize bookkeeping on a dropped frame") {
  auto streams = make_streams(2, 10, 0.05, {0.0, 0.0});
  streams[1].frames.erase(streams[1].frames.begin() + 4);  // sensor 1 misses step 4

  SynchronizeStats strict;
  const auto complete_only = synchronize(streams, 20.0, false, &strict);
  CHECK(static_cast<int>(complete_only.size()) == 9);
  CHECK(strict.dropped_groups == 1);
  CHECK(strict.missing_clouds == 1);

  SynchronizeStats partial;
  const auto with_partial = synchronize(streams, 20.0, true, &partial);
  CHECK(static_cast<int>(with_partial.size()) == 10);
  CHECK(partial.missing_clouds == 1);
  CHECK(with_partial[4].items[1] == -1);

  streams[0].frames.clear();
  CHECK_THROWS_WITH_AS(synchronize(streams, 20.0, false).size(), doctest::Contains("sensor 0"),
                       std::runtime_error);
}

TEST_CASE("cli end to end on a desk-scale dataset") {
  const auto root = temp_dir("cli_e2e");
  const auto ds = root / "ds";
  const auto out1 = root / "run1";
  const auto out3 = root / "run3";

  // scenario config: tiny custom scene to keep this fast
  const auto cfg_path = root / "scenario.json";
  {
    std::ofstream os(cfg_path);
    os << R"({
      "name": "smoke",
      "layout": "custom",
      "n_sensors": 2,
      "duration": 1.0,
      "sample_rate": 20.0,
      "n_actors": 2,
      "seed": 3,
      "lidar": {"layers": 24, "horizontal_steps": 256, "max_range": 60.0}
    })";
  }

  REQUIRE(run_cli("simulate --config " + cfg_path.string() + " --output " + ds.string()) == 0);
  REQUIRE(fs::exists(ds / "manifest.json"));

  // determinism: a second run is byte-identical
  const auto ds2 = root / "ds2";
  REQUIRE(run_cli("simulate --config " + cfg_path.string() + " --output " + ds2.string()) == 0);
  CHECK(slurp(ds / "gt.csv") == slurp(ds2 / "gt.csv"));
  CHECK(slurp(ds / "frames/s0_f000000.lfrm") == slurp(ds2 / "frames/s0_f000000.lfrm"));
  CHECK(slurp(ds / "frames/s1_f000010.lfrm") == slurp(ds2 / "frames/s1_f000010.lfrm"));

  REQUIRE(run_cli("register --dataset " + ds.string() + " --voxel-size 1 --threads 2 --output " +
                  out1.string() + " --export-fused") == 0);
  REQUIRE(fs::exists(out1 / "poses.csv"));
  REQUIRE(fs::exists(out1 / "runtimes.csv"));
  REQUIRE(fs::exists(out1 / "fused/frame_000001.ply"));

  // one pose record per sensor per frame
  const auto poses = read_pose_csv((out1 / "poses.csv").string());
  CHECK(poses.size() == 2u * 20u);

  REQUIRE(run_cli("evaluate --poses " + (out1 / "poses.csv").string() + " --gt " +
                  (ds / "gt.csv").string() + " --runtimes " + (out1 / "runtimes.csv").string() +
                  " --run-json " + (out1 / "run.json").string() + " --output " +
                  out1.string()) == 0);
  REQUIRE(fs::exists(out1 / "summary.csv"));
  const auto summary = lidarfuse::eval::read_summary_csv((out1 / "summary.csv").string());
  REQUIRE(summary.size() == 1);
  CHECK(summary[0].avg_rmse_trans_cm < 50.0);  // sane desk-scale sanity bound

  REQUIRE(run_cli("report --summary " + (out1 / "summary.csv").string()) == 0);

  // coarser voxel still completes
  REQUIRE(run_cli("register --dataset " + ds.string() + " --voxel-size 3 --output " +
                  out3.string()) == 0);

  // exit codes: usage error vs runtime failure
  CHECK(run_cli("register --no-such-flag") == 1);
  CHECK(run_cli("nonsense") == 1);
  CHECK(run_cli("register --dataset /nonexistent/path") == 2);
  CHECK(run_cli("simulate --config /nonexistent.json") == 2);
}
