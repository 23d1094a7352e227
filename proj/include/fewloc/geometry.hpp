#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <optional>
#include <string>
#include <vector>

namespace fewloc {

// Points closer to the image plane than this are treated as behind the
// camera (cheirality).
inline constexpr double kCheiralityEps = 1e-6;

// Rigid camera-to-world transform. Rotation kept as a unit quaternion and
// renormalized after every construction and composition so long solver loops
// cannot drift.
struct Se3Pose {
  Eigen::Quaterniond rotation{1.0, 0.0, 0.0, 0.0};
  Eigen::Vector3d translation{0.0, 0.0, 0.0};

  Se3Pose() = default;
  Se3Pose(const Eigen::Quaterniond& q, const Eigen::Vector3d& t)
      : rotation(q.normalized()), translation(t) {}

  static Se3Pose identity() { return {}; }

  Eigen::Vector3d apply(const Eigen::Vector3d& p) const {
    return rotation * p + translation;
  }

  // this ∘ rhs: apply rhs first, then this.
  Se3Pose compose(const Se3Pose& rhs) const {
    return Se3Pose(rotation * rhs.rotation,
                   rotation * rhs.translation + translation);
  }

  Se3Pose inverse() const {
    const Eigen::Quaterniond qi = rotation.conjugate();
    return Se3Pose(qi, qi * (-translation));
  }

  Eigen::Matrix3d rotation_matrix() const { return rotation.toRotationMatrix(); }
};

struct PinholeCamera {
  double fx = 0.0, fy = 0.0;
  double cx = 0.0, cy = 0.0;
  int width = 0, height = 0;

  // Throws DataError when intrinsics violate fx,fy > 0, 0 <= cx < width,
  // 0 <= cy < height.
  void validate() const;
  bool contains(const Eigen::Vector2d& px) const {
    return px.x() >= 0.0 && px.x() < width && px.y() >= 0.0 && px.y() < height;
  }
};

struct PointCloud {
  std::vector<Eigen::Vector3d> points;
  // Optional: index of the view each point came from; empty when untracked.
  std::vector<int32_t> source_view;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  Eigen::Vector3d centroid() const;
};

// Single-channel depth raster, meters. Values <= 0 or non-finite mark
// missing depth.
struct DepthImage {
  int width = 0;
  int height = 0;
  std::vector<float> data;

  DepthImage() = default;
  DepthImage(int w, int h) : width(w), height(h), data(std::size_t(w) * h, 0.f) {}

  float at(int x, int y) const { return data[std::size_t(y) * width + x]; }
  void set(int x, int y, float d) { data[std::size_t(y) * width + x] = d; }
  static bool valid_depth(float d) { return std::isfinite(d) && d > 0.f; }
};

struct PosedDepth {
  DepthImage depth;
  Se3Pose pose;  // camera-to-world
};

// Pinhole projection of a world point. Poses are camera-to-world, so the
// projection applies the inverse. Returns nullopt when the camera-frame
// depth is <= kCheiralityEps.
std::optional<Eigen::Vector2d> project(const Se3Pose& pose,
                                       const PinholeCamera& camera,
                                       const Eigen::Vector3d& point);

// Inverse of project at the given z-depth (distance along the optical axis).
// Throws DataError when depth <= 0.
Eigen::Vector3d backproject(const Se3Pose& pose, const PinholeCamera& camera,
                            const Eigen::Vector2d& pixel, double depth);

// Union of back-projected depth views, sampled every `stride` pixels in both
// axes. Output order is deterministic: view order, then row-major pixels.
// Throws DataError when no valid depth sample exists or dims mismatch.
PointCloud fuse_point_cloud(const std::vector<PosedDepth>& views,
                            const PinholeCamera& camera, int stride);

struct PoseError {
  double translation_m = 0.0;
  double rotation_deg = 0.0;
};

// Translation: ||t_est - t_true||. Rotation: angle of R_true^T R_est in
// degrees, in [0, 180].
PoseError pose_error(const Se3Pose& estimate, const Se3Pose& truth);

// --- File formats -----------------------------------------------------------

// Trajectory: one camera-to-world pose per line, "tx ty tz qx qy qz qw".
void save_trajectory(const std::string& path, const std::vector<Se3Pose>& poses);
std::vector<Se3Pose> load_trajectory(const std::string& path);

// Depth raster: 16-byte header (magic "SRDP", u32 width, u32 height,
// f32 scale) then row-major little-endian u16 samples; meters = stored *
// scale, 0 = invalid.
void save_depth_raster(const std::string& path, const DepthImage& img,
                       float scale = 1e-3f);
DepthImage load_depth_raster(const std::string& path);

// Plain-text matrix for tests: "width height" on the first line, then
// `height` rows of `width` depth values.
void save_depth_text(const std::string& path, const DepthImage& img);
DepthImage load_depth_text(const std::string& path);

// Point cloud: "x y z" per line.
void save_point_cloud_text(const std::string& path, const PointCloud& cloud);
PointCloud load_point_cloud_text(const std::string& path);

}  // namespace fewloc
