#include "lidpm/dataio.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <Eigen/LU>

#include "lidpm/errors.hpp"

namespace fs = std::filesystem;

namespace lidpm {

namespace {

template <typename T>
T load_le(const char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    auto* b = reinterpret_cast<unsigned char*>(&v);
    std::reverse(b, b + sizeof(T));
  }
  return v;
}

template <typename T>
void store_le(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  out.append(buf, sizeof(T));
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw DataError("read failed: " + path.string());
  return std::move(ss).str();
}

void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw DataError("write failed: " + path.string());
}

std::size_t ply_type_size(const std::string& type) {
  if (type == "char" || type == "uchar" || type == "int8" || type == "uint8") return 1;
  if (type == "short" || type == "ushort" || type == "int16" || type == "uint16") return 2;
  if (type == "int" || type == "uint" || type == "int32" || type == "uint32" || type == "float" ||
      type == "float32") {
    return 4;
  }
  if (type == "double" || type == "float64") return 8;
  return 0;
}

double ply_value(const std::string& type, const char* p) {
  if (type == "float" || type == "float32") return load_le<float>(p);
  if (type == "double" || type == "float64") return load_le<double>(p);
  if (type == "char" || type == "int8") return load_le<std::int8_t>(p);
  if (type == "uchar" || type == "uint8") return load_le<std::uint8_t>(p);
  if (type == "short" || type == "int16") return load_le<std::int16_t>(p);
  if (type == "ushort" || type == "uint16") return load_le<std::uint16_t>(p);
  if (type == "int" || type == "int32") return load_le<std::int32_t>(p);
  return load_le<std::uint32_t>(p);
}

Pose parse_3x4(const std::vector<double>& v) {
  Pose m = Pose::Identity();
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 4; ++c) m(r, c) = v[static_cast<std::size_t>(4 * r + c)];
  }
  return m;
}

}  // namespace

std::vector<std::uint32_t> default_moving_classes() {
  return {252, 253, 254, 255, 256, 257, 258, 259};
}

bool is_valid_pose(const Pose& pose, double tol) {
  if (!pose.allFinite()) return false;
  const Eigen::Matrix3d r = pose.topLeftCorner<3, 3>();
  if ((r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > tol) return false;
  if (std::abs(r.determinant() - 1.0) > tol) return false;
  return (pose.row(3) - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff() <= tol;
}

PointCloud read_bin(const fs::path& path) {
  const std::string bytes = read_file(path);
  constexpr std::size_t kRecord = 16;
  if (bytes.size() % kRecord != 0) {
    throw ParseError(path.string() + ": length " + std::to_string(bytes.size()) +
                         " is not a multiple of 16",
                     bytes.size() - bytes.size() % kRecord);
  }
  const std::size_t n = bytes.size() / kRecord;
  PointCloud pc;
  pc.points.resize(n);
  std::vector<float> intensity(n);
  for (std::size_t i = 0; i < n; ++i) {
    const char* p = bytes.data() + i * kRecord;
    pc.points[i] = Vec3(load_le<float>(p), load_le<float>(p + 4), load_le<float>(p + 8));
    intensity[i] = load_le<float>(p + 12);
  }
  pc.intensity = std::move(intensity);
  return pc;
}

std::vector<std::uint32_t> read_labels(const fs::path& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() % 4 != 0) {
    throw ParseError(path.string() + ": label file length is not a multiple of 4",
                     bytes.size() - bytes.size() % 4);
  }
  std::vector<std::uint32_t> labels(bytes.size() / 4);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = load_le<std::uint32_t>(bytes.data() + 4 * i);
  return labels;
}

ScanRecord read_scan(const fs::path& path, const std::optional<fs::path>& labels_dir) {
  ScanRecord rec;
  rec.cloud = read_bin(path);
  fs::path label_path = path;
  label_path.replace_extension(".label");
  if (labels_dir) label_path = *labels_dir / label_path.filename();
  if (fs::exists(label_path)) {
    auto labels = read_labels(label_path);
    if (labels.size() != rec.cloud.size()) {
      throw DataError(label_path.string() + ": " + std::to_string(labels.size()) + " labels for " +
                      std::to_string(rec.cloud.size()) + " points");
    }
    rec.labels = std::move(labels);
  }
  return rec;
}

CloudFormat format_from_path(const fs::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".ply") return CloudFormat::Ply;
  if (ext == ".bin") return CloudFormat::Bin;
  throw DataError("unknown point cloud format: " + path.string());
}

void write_cloud(const PointCloud& pc, const fs::path& path, CloudFormat format) {
  pc.validate();
  std::string out;
  const bool with_intensity = pc.intensity.has_value();
  if (format == CloudFormat::Bin) {
    out.reserve(pc.size() * 16);
    for (std::size_t i = 0; i < pc.size(); ++i) {
      const Vec3& p = pc.points[i];
      store_le(out, static_cast<float>(p.x()));
      store_le(out, static_cast<float>(p.y()));
      store_le(out, static_cast<float>(p.z()));
      store_le(out, with_intensity ? (*pc.intensity)[i] : 0.0f);
    }
  } else {
    out = "ply\nformat binary_little_endian 1.0\nelement vertex " + std::to_string(pc.size()) +
          "\nproperty float x\nproperty float y\nproperty float z\n";
    if (with_intensity) out += "property float intensity\n";
    out += "end_header\n";
    for (std::size_t i = 0; i < pc.size(); ++i) {
      const Vec3& p = pc.points[i];
      store_le(out, static_cast<float>(p.x()));
      store_le(out, static_cast<float>(p.y()));
      store_le(out, static_cast<float>(p.z()));
      if (with_intensity) store_le(out, (*pc.intensity)[i]);
    }
  }
  write_file(path, out);
}

void write_cloud(const PointCloud& pc, const fs::path& path) {
  write_cloud(pc, path, format_from_path(path));
}

void write_labels(const std::vector<std::uint32_t>& labels, const fs::path& path) {
  std::string out;
  out.reserve(labels.size() * 4);
  for (auto l : labels) store_le(out, l);
  write_file(path, out);
}

PointCloud read_ply(const fs::path& path) {
  const std::string bytes = read_file(path);
  const std::string terminator = "end_header\n";
  const std::size_t header_end = bytes.find(terminator);
  if (bytes.rfind("ply", 0) != 0 || header_end == std::string::npos) {
    throw ParseError(path.string() + ": not a PLY file", 0);
  }
  std::istringstream header(bytes.substr(0, header_end));
  std::string line;
  bool binary_le = false;
  bool in_vertex = false;
  bool vertex_seen = false;
  std::size_t count = 0;
  struct Prop {
    std::string type;
    std::string name;
    std::size_t offset;
  };
  std::vector<Prop> props;
  std::size_t stride = 0;
  while (std::getline(header, line)) {
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "format") {
      std::string fmt;
      ls >> fmt;
      binary_le = fmt == "binary_little_endian";
    } else if (key == "element") {
      std::string name;
      ls >> name;
      if (vertex_seen) {
        in_vertex = false;
        continue;
      }
      if (name != "vertex") throw DataError(path.string() + ": first PLY element must be vertex");
      ls >> count;
      in_vertex = vertex_seen = true;
    } else if (key == "property" && in_vertex) {
      std::string type, name;
      ls >> type >> name;
      const std::size_t size = ply_type_size(type);
      if (size == 0) throw DataError(path.string() + ": unsupported PLY property type " + type);
      props.push_back({type, name, stride});
      stride += size;
    }
  }
  if (!binary_le) throw DataError(path.string() + ": only binary_little_endian PLY is supported");
  auto find = [&](const std::string& name) -> const Prop* {
    for (const auto& p : props) {
      if (p.name == name) return &p;
    }
    return nullptr;
  };
  const Prop* px = find("x");
  const Prop* py = find("y");
  const Prop* pz = find("z");
  const Prop* pi = find("intensity");
  if (!px || !py || !pz) throw DataError(path.string() + ": PLY vertex lacks x/y/z");
  const std::size_t body = header_end + terminator.size();
  if (bytes.size() < body + count * stride) {
    throw ParseError(path.string() + ": truncated PLY body",
                     body + (bytes.size() - body) / std::max<std::size_t>(stride, 1) * stride);
  }
  PointCloud pc;
  pc.points.resize(count);
  std::vector<float> intensity;
  if (pi) intensity.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const char* rec = bytes.data() + body + i * stride;
    pc.points[i] = Vec3(ply_value(px->type, rec + px->offset), ply_value(py->type, rec + py->offset),
                        ply_value(pz->type, rec + pz->offset));
    if (pi) intensity[i] = static_cast<float>(ply_value(pi->type, rec + pi->offset));
  }
  if (pi) pc.intensity = std::move(intensity);
  return pc;
}

PointCloud read_cloud(const fs::path& path) {
  return format_from_path(path) == CloudFormat::Ply ? read_ply(path) : read_bin(path);
}

std::vector<Pose> read_poses(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<Pose> poses;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    std::vector<double> v;
    double x;
    while (ls >> x) v.push_back(x);
    if (v.size() != 12 || !ls.eof()) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected 12 numbers");
    }
    poses.push_back(parse_3x4(v));
  }
  return poses;
}

void write_poses(const std::vector<Pose>& poses, const fs::path& path) {
  std::ostringstream os;
  os.precision(17);
  for (const auto& p : poses) {
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 4; ++c) os << p(r, c) << ((r == 2 && c == 3) ? '\n' : ' ');
    }
  }
  write_file(path, os.str());
}

Pose read_calibration(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("Tr:", 0) != 0) continue;
    std::istringstream ls(line.substr(3));
    std::vector<double> v;
    double x;
    while (ls >> x) v.push_back(x);
    if (v.size() != 12) throw DataError(path.string() + ": Tr entry needs 12 numbers");
    return parse_3x4(v);
  }
  return Pose::Identity();
}

std::vector<Pose> sensor_poses(const std::vector<Pose>& camera_poses, const Pose& tr) {
  const Pose tr_inv = tr.inverse();
  std::vector<Pose> out;
  out.reserve(camera_poses.size());
  for (const auto& p : camera_poses) out.push_back(tr_inv * p * tr);
  return out;
}

PointCloud aggregate(const std::vector<ScanRecord>& scans, std::size_t center_index,
                     double max_range, const std::vector<std::uint32_t>& moving_classes) {
  if (center_index >= scans.size()) {
    throw std::invalid_argument("center index " + std::to_string(center_index) + " outside " +
                                std::to_string(scans.size()) + " scans");
  }
  for (std::size_t s = 0; s < scans.size(); ++s) {
    if (!is_valid_pose(scans[s].pose)) throw DataError("invalid pose for scan " + std::to_string(s));
  }
  const Pose world_to_center = scans[center_index].pose.inverse();
  PointCloud out;
  bool any_intensity = false;
  for (const auto& s : scans) any_intensity = any_intensity || s.cloud.intensity.has_value();
  std::vector<float> intensity;
  for (std::size_t s = 0; s < scans.size(); ++s) {
    const ScanRecord& rec = scans[s];
    const Pose rel = world_to_center * rec.pose;
    const Eigen::Matrix3d r = rel.topLeftCorner<3, 3>();
    const Vec3 t = rel.topRightCorner<3, 1>();
    for (std::size_t i = 0; i < rec.cloud.size(); ++i) {
      if (rec.labels) {
        const std::uint32_t cls = semantic_class((*rec.labels)[i]);
        if (std::find(moving_classes.begin(), moving_classes.end(), cls) != moving_classes.end()) {
          continue;
        }
      }
      const Vec3 p = r * rec.cloud.points[i] + t;
      if (p.norm() > max_range) continue;
      out.points.push_back(p);
      if (any_intensity) intensity.push_back(rec.cloud.intensity ? (*rec.cloud.intensity)[i] : 0.0f);
    }
  }
  if (any_intensity) out.intensity = std::move(intensity);
  return out;
}

ScanPair make_pair(const std::vector<ScanRecord>& scans, std::size_t center_index,
                   const PairConfig& cfg) {
  if (center_index >= scans.size()) {
    throw std::invalid_argument("center index " + std::to_string(center_index) + " outside " +
                                std::to_string(scans.size()) + " scans");
  }
  ScanPair pair;
  const PointCloud cropped = range_crop(scans[center_index].cloud, cfg.crop_range);
  pair.sparse = farthest_point_sample(cropped, std::min(cfg.budget_sparse, cropped.size()), cfg.seed);
  const PointCloud dense = aggregate(scans, center_index, cfg.crop_range, cfg.moving_classes);
  pair.dense = uniform_sample(dense, std::min(cfg.budget_dense, dense.size()), cfg.seed + 1);
  return pair;
}

std::pair<std::vector<ScanRecord>, std::size_t> load_window(const SequencePaths& paths,
                                                            std::size_t center,
                                                            std::size_t window) {
  if (!fs::is_directory(paths.scans_dir)) {
    throw DataError("scans directory not found: " + paths.scans_dir.string());
  }
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(paths.scans_dir)) {
    if (e.is_regular_file() && e.path().extension() == ".bin") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (center >= files.size()) {
    throw DataError("center scan " + std::to_string(center) + " not in " + paths.scans_dir.string() +
                    " (" + std::to_string(files.size()) + " scans)");
  }
  std::vector<Pose> poses;
  if (paths.poses_file) {
    poses = read_poses(*paths.poses_file);
    if (paths.calib_file) poses = sensor_poses(poses, read_calibration(*paths.calib_file));
    if (poses.size() < files.size()) {
      throw DataError(paths.poses_file->string() + ": " + std::to_string(poses.size()) +
                      " poses for " + std::to_string(files.size()) + " scans");
    }
  }
  const std::size_t first = center >= window ? center - window : 0;
  const std::size_t last = std::min(files.size() - 1, center + window);
  std::vector<ScanRecord> scans;
  for (std::size_t i = first; i <= last; ++i) {
    ScanRecord rec = read_scan(files[i], paths.labels_dir);
    if (!poses.empty()) rec.pose = poses[i];
    scans.push_back(std::move(rec));
  }
  return {std::move(scans), center - first};
}

}  // namespace lidpm
