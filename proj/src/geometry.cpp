#include "fewloc/geometry.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "fewloc/errors.hpp"

namespace fewloc {

void PinholeCamera::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0))
    throw DataError("camera: focal lengths must be positive");
  if (!(cx >= 0.0 && cx < width) || !(cy >= 0.0 && cy < height))
    throw DataError("camera: principal point outside image");
}

Eigen::Vector3d PointCloud::centroid() const {
  Eigen::Vector3d c = Eigen::Vector3d::Zero();
  for (const auto& p : points) c += p;
  return points.empty() ? c : Eigen::Vector3d(c / double(points.size()));
}

std::optional<Eigen::Vector2d> project(const Se3Pose& pose,
                                       const PinholeCamera& camera,
                                       const Eigen::Vector3d& point) {
  const Eigen::Vector3d pc =
      pose.rotation.conjugate() * (point - pose.translation);
  if (pc.z() <= kCheiralityEps) return std::nullopt;
  return Eigen::Vector2d(camera.fx * pc.x() / pc.z() + camera.cx,
                         camera.fy * pc.y() / pc.z() + camera.cy);
}

Eigen::Vector3d backproject(const Se3Pose& pose, const PinholeCamera& camera,
                            const Eigen::Vector2d& pixel, double depth) {
  if (!(depth > 0.0))
    throw DataError("backproject: depth must be positive, got " +
                    std::to_string(depth));
  const Eigen::Vector3d pc((pixel.x() - camera.cx) / camera.fx * depth,
                           (pixel.y() - camera.cy) / camera.fy * depth, depth);
  return pose.apply(pc);
}

PointCloud fuse_point_cloud(const std::vector<PosedDepth>& views,
                            const PinholeCamera& camera, int stride) {
  if (views.empty()) throw DataError("fuse_point_cloud: no views");
  if (stride < 1) throw DataError("fuse_point_cloud: stride must be >= 1");
  PointCloud cloud;
  for (std::size_t v = 0; v < views.size(); ++v) {
    const auto& view = views[v];
    if (view.depth.width != camera.width || view.depth.height != camera.height)
      throw DataError("fuse_point_cloud: depth dims do not match camera");
    for (int y = 0; y < view.depth.height; y += stride) {
      for (int x = 0; x < view.depth.width; x += stride) {
        const float d = view.depth.at(x, y);
        if (!DepthImage::valid_depth(d)) continue;
        cloud.points.push_back(
            backproject(view.pose, camera, {double(x), double(y)}, d));
        cloud.source_view.push_back(int32_t(v));
      }
    }
  }
  if (cloud.empty())
    throw DataError("fuse_point_cloud: all depth samples invalid");
  return cloud;
}

PoseError pose_error(const Se3Pose& estimate, const Se3Pose& truth) {
  PoseError e;
  e.translation_m = (estimate.translation - truth.translation).norm();
  const Eigen::Quaterniond qrel =
      truth.rotation.conjugate() * estimate.rotation;
  const double s = qrel.vec().norm();
  const double c = std::abs(qrel.w());
  e.rotation_deg = 2.0 * std::atan2(s, c) * 180.0 / M_PI;
  return e;
}

// --- Trajectory --------------------------------------------------------------

void save_trajectory(const std::string& path,
                     const std::vector<Se3Pose>& poses) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open for write: " + path);
  out.precision(17);
  for (const auto& p : poses) {
    out << p.translation.x() << ' ' << p.translation.y() << ' '
        << p.translation.z() << ' ' << p.rotation.x() << ' ' << p.rotation.y()
        << ' ' << p.rotation.z() << ' ' << p.rotation.w() << '\n';
  }
  if (!out) throw DataError("write failed: " + path);
}

std::vector<Se3Pose> load_trajectory(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open: " + path);
  std::vector<Se3Pose> poses;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    double tx, ty, tz, qx, qy, qz, qw;
    if (!(ss >> tx >> ty >> tz >> qx >> qy >> qz >> qw))
      throw DataError("bad trajectory line in " + path + ": " + line);
    poses.emplace_back(Eigen::Quaterniond(qw, qx, qy, qz),
                       Eigen::Vector3d(tx, ty, tz));
  }
  return poses;
}

// --- Depth raster -------------------------------------------------------------

namespace {
constexpr char kDepthMagic[4] = {'S', 'R', 'D', 'P'};

template <typename T>
void write_le(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_le(std::ifstream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}
}  // namespace

void save_depth_raster(const std::string& path, const DepthImage& img,
                       float scale) {
  if (!(scale > 0.f)) throw DataError("depth raster scale must be positive");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for write: " + path);
  out.write(kDepthMagic, 4);
  write_le<uint32_t>(out, uint32_t(img.width));
  write_le<uint32_t>(out, uint32_t(img.height));
  write_le<float>(out, scale);
  std::vector<uint16_t> row(std::size_t(img.width) * img.height);
  for (std::size_t i = 0; i < row.size(); ++i) {
    const float d = img.data[i];
    if (!DepthImage::valid_depth(d)) {
      row[i] = 0;
      continue;
    }
    const double q = std::round(double(d) / scale);
    row[i] = uint16_t(q < 1.0 ? 1.0 : (q > 65535.0 ? 65535.0 : q));
  }
  out.write(reinterpret_cast<const char*>(row.data()),
            std::streamsize(row.size() * sizeof(uint16_t)));
  if (!out) throw DataError("write failed: " + path);
}

DepthImage load_depth_raster(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kDepthMagic, 4) != 0)
    throw DataError("not a depth raster: " + path);
  const auto w = read_le<uint32_t>(in);
  const auto h = read_le<uint32_t>(in);
  const auto scale = read_le<float>(in);
  if (!in || w == 0 || h == 0 || !(scale > 0.f))
    throw DataError("bad depth raster header: " + path);
  DepthImage img(int(w), int(h));
  std::vector<uint16_t> raw(std::size_t(w) * h);
  in.read(reinterpret_cast<char*>(raw.data()),
          std::streamsize(raw.size() * sizeof(uint16_t)));
  if (!in) throw DataError("truncated depth raster: " + path);
  for (std::size_t i = 0; i < raw.size(); ++i)
    img.data[i] = raw[i] == 0 ? 0.f : float(raw[i]) * scale;
  return img;
}

void save_depth_text(const std::string& path, const DepthImage& img) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open for write: " + path);
  out.precision(9);
  out << img.width << ' ' << img.height << '\n';
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x)
      out << img.at(x, y) << (x + 1 == img.width ? '\n' : ' ');
  }
  if (!out) throw DataError("write failed: " + path);
}

DepthImage load_depth_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open: " + path);
  int w = 0, h = 0;
  if (!(in >> w >> h) || w <= 0 || h <= 0)
    throw DataError("bad depth text header: " + path);
  DepthImage img(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      float d;
      if (!(in >> d)) throw DataError("truncated depth text: " + path);
      img.set(x, y, d);
    }
  }
  return img;
}

// --- Point cloud --------------------------------------------------------------

void save_point_cloud_text(const std::string& path, const PointCloud& cloud) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open for write: " + path);
  out.precision(17);
  for (const auto& p : cloud.points)
    out << p.x() << ' ' << p.y() << ' ' << p.z() << '\n';
  if (!out) throw DataError("write failed: " + path);
}

PointCloud load_point_cloud_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open: " + path);
  PointCloud cloud;
  double x, y, z;
  while (in >> x >> y >> z) cloud.points.emplace_back(x, y, z);
  return cloud;
}

}  // namespace fewloc
