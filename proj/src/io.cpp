#include "lidarfuse/io.hpp"

#include "json.hpp"  // vendored nlohmann/json

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace lidarfuse {

namespace {

template <typename T>
void write_raw(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::istream& is) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

}  // namespace

void write_frame_file(const std::string& path, const PointCloud& cloud) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_frame_file: cannot open " + path);
  os.write("LFRM", 4);
  write_raw<std::uint16_t>(os, 1);
  write_raw<std::uint16_t>(os, static_cast<std::uint16_t>(cloud.sensor_id));
  write_raw<double>(os, cloud.timestamp);
  write_raw<std::uint32_t>(os, static_cast<std::uint32_t>(cloud.points.size()));
  std::vector<float> buf;
  buf.reserve(cloud.points.size() * 3);
  for (const Vec3& p : cloud.points) {
    buf.push_back(static_cast<float>(p.x()));
    buf.push_back(static_cast<float>(p.y()));
    buf.push_back(static_cast<float>(p.z()));
  }
  os.write(reinterpret_cast<const char*>(buf.data()),
           static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!os) throw std::runtime_error("write_frame_file: write failed for " + path);
}

PointCloud read_frame_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("read_frame_file: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "LFRM", 4) != 0) {
    throw std::runtime_error("read_frame_file: bad magic in " + path);
  }
  const auto version = read_raw<std::uint16_t>(is);
  if (version != 1) throw std::runtime_error("read_frame_file: unsupported version");
  PointCloud cloud;
  cloud.sensor_id = read_raw<std::uint16_t>(is);
  cloud.timestamp = read_raw<double>(is);
  const auto count = read_raw<std::uint32_t>(is);
  std::vector<float> buf(static_cast<std::size_t>(count) * 3);
  is.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!is) throw std::runtime_error("read_frame_file: truncated file " + path);
  cloud.points.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    cloud.points.emplace_back(buf[3 * i], buf[3 * i + 1], buf[3 * i + 2]);
  }
  return cloud;
}

void write_manifest(const std::string& path, const FrameManifest& m) {
  nlohmann::json j;
  j["dataset_id"] = m.dataset_id;
  j["n_sensors"] = m.n_sensors;
  j["sample_rate"] = m.sample_rate;
  if (m.angular_resolution_deg > 0.0) j["angular_resolution_deg"] = m.angular_resolution_deg;
  if (!m.gt_path.empty()) j["gt_path"] = m.gt_path;
  for (const auto& s : m.streams) {
    nlohmann::json js;
    js["sensor_id"] = s.sensor_id;
    for (const auto& f : s.frames) {
      js["frames"].push_back({{"path", f.path}, {"timestamp", f.timestamp}});
    }
    j["streams"].push_back(js);
  }
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_manifest: cannot open " + path);
  os << j.dump(1) << "\n";
}

FrameManifest read_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("read_manifest: cannot open " + path);
  nlohmann::json j;
  is >> j;
  FrameManifest m;
  m.dataset_id = j.value("dataset_id", "");
  m.n_sensors = j.at("n_sensors").get<int>();
  m.sample_rate = j.at("sample_rate").get<double>();
  m.angular_resolution_deg = j.value("angular_resolution_deg", 0.0);
  m.gt_path = j.value("gt_path", "");
  for (const auto& js : j.at("streams")) {
    StreamInfo s;
    s.sensor_id = js.at("sensor_id").get<int>();
    if (js.contains("frames")) {
      for (const auto& jf : js.at("frames")) {
        s.frames.push_back({jf.at("path").get<std::string>(), jf.at("timestamp").get<double>()});
      }
    }
    m.streams.push_back(std::move(s));
  }
  const auto slash = path.find_last_of('/');
  m.directory = slash == std::string::npos ? "." : path.substr(0, slash);
  return m;
}

void write_pose_csv(const std::string& path, const std::vector<PoseRecord>& records,
                    bool with_orientation) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_pose_csv: cannot open " + path);
  os << std::setprecision(17);
  os << (with_orientation ? "time_step,sensor_id,px,py,pz,qw,qx,qy,qz\n"
                          : "time_step,sensor_id,px,py,pz\n");
  for (const auto& r : records) {
    os << r.time_step << "," << r.sensor_id << "," << r.pose.translation.x() << ","
       << r.pose.translation.y() << "," << r.pose.translation.z();
    if (with_orientation) {
      const UnitQuaternion q = quat_from_matrix(r.pose.rotation);
      os << "," << q.w << "," << q.x << "," << q.y << "," << q.z;
    }
    os << "\n";
  }
}

std::vector<PoseRecord> read_pose_csv(const std::string& path, bool* has_orientation) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("read_pose_csv: cannot open " + path);
  std::vector<PoseRecord> out;
  std::string line;
  bool oriented = true;
  bool first = true;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (first && line.find("time_step") != std::string::npos) {
      first = false;
      oriented = line.find("qw") != std::string::npos;
      continue;
    }
    first = false;
    std::stringstream ss(line);
    std::string tok;
    std::vector<double> vals;
    while (std::getline(ss, tok, ',')) vals.push_back(std::stod(tok));
    if (vals.size() != 9 && vals.size() != 5) {
      throw std::runtime_error("read_pose_csv: malformed row in " + path);
    }
    PoseRecord r;
    r.time_step = static_cast<int>(vals[0]);
    r.sensor_id = static_cast<int>(vals[1]);
    r.pose.translation = Vec3(vals[2], vals[3], vals[4]);
    if (vals.size() == 9) {
      r.pose.rotation = quat_to_matrix({vals[5], vals[6], vals[7], vals[8]});
    } else {
      oriented = false;
    }
    out.push_back(r);
  }
  if (has_orientation) *has_orientation = oriented && !out.empty();
  return out;
}

void write_ply(const std::string& path, const FusedCloud& cloud) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_ply: cannot open " + path);
  os << "ply\nformat ascii 1.0\n";
  os << "element vertex " << cloud.points.size() << "\n";
  os << "property float x\nproperty float y\nproperty float z\n";
  os << "property int sensor_id\nend_header\n";
  os << std::setprecision(9);
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    os << cloud.points[i].x() << " " << cloud.points[i].y() << " " << cloud.points[i].z() << " "
       << cloud.sensor_ids[i] << "\n";
  }
}

}  // namespace lidarfuse
