#pragma once

#include "lidarfuse/geom.hpp"

#include <string>
#include <vector>

namespace lidarfuse {

// Binary frame file: magic "LFRM", version u16, sensor_id u16, timestamp
// f64 (seconds), point_count u32, then point_count * 3 * f32 (x, y, z in
// meters). Little-endian, one file per sensor per frame.
void write_frame_file(const std::string& path, const PointCloud& cloud);
PointCloud read_frame_file(const std::string& path);

struct FrameRef {
  std::string path;  // relative to the manifest directory
  double timestamp = 0.0;
};

struct StreamInfo {
  int sensor_id = 0;
  std::vector<FrameRef> frames;
};

struct FrameManifest {
  std::string dataset_id;
  int n_sensors = 0;
  double sample_rate = 0.0;
  double angular_resolution_deg = 0.0;  // 0: unknown
  std::vector<StreamInfo> streams;
  std::string gt_path;  // empty when no ground truth
  std::string directory;  // set on read; not serialized
};

void write_manifest(const std::string& path, const FrameManifest& m);
FrameManifest read_manifest(const std::string& path);

/// Predicted or ground-truth pose rows:
/// time_step, sensor_id, px, py, pz, qw, qx, qy, qz
struct PoseRecord {
  int time_step = 0;
  int sensor_id = 0;
  RigidTransform pose;
};

void write_pose_csv(const std::string& path, const std::vector<PoseRecord>& records,
                    bool with_orientation = true);
std::vector<PoseRecord> read_pose_csv(const std::string& path, bool* has_orientation = nullptr);

/// Fused output of one frame: points in the common frame, tagged by sensor.
struct FusedCloud {
  std::vector<Vec3> points;
  std::vector<int> sensor_ids;
};

void write_ply(const std::string& path, const FusedCloud& cloud);

}  // namespace lidarfuse
