#pragma once

// Rigid poses, pinhole intrinsics, rays and stratified samples.
//
// Conventions: poses are camera-to-world. The camera looks down its local -z
// axis, image x grows rightward and image y grows downward, so camera +y is
// "up" in the image. Depths are ray distances (not z-depth).

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace radloc {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static Pose identity() { return {}; }

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
  Vec3 apply_inverse(const Vec3& p) const { return rotation.transpose() * (p - translation); }
  /// Optical axis in world coordinates.
  Vec3 view_direction() const { return -rotation.col(2); }

  bool is_valid(double tol = 1e-9) const;
};

Pose compose(const Pose& a, const Pose& b);
Pose inverse(const Pose& p);

struct PoseError {
  double translation = 0.0;  // meters
  double rotation_deg = 0.0;
};

PoseError pose_error(const Pose& estimate, const Pose& truth);

Mat3 rotation_x(double radians);
Mat3 rotation_y(double radians);
Mat3 rotation_z(double radians);
Mat3 axis_angle(const Vec3& axis, double radians);
/// Rodrigues map of a rotation vector (axis * angle).
Mat3 exp_so3(const Vec3& omega);
/// Project an almost-rotation back onto SO(3).
Mat3 orthonormalize(const Mat3& m);

/// Camera at `eye` looking at `target`; `up` fixes roll.
Pose look_at(const Vec3& eye, const Vec3& target, const Vec3& up = Vec3::UnitZ());

/// Pose serialization: 12 little-endian float64 (row-major R, then t).
void append_pose_bytes(const Pose& p, std::vector<std::uint8_t>& out);
Pose pose_from_bytes(std::span<const std::uint8_t> bytes);

struct Intrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;

  static Intrinsics from_fov(int width, int height, double horizontal_fov_deg);
  void validate() const;
  int pixel_count() const { return width * height; }
};

struct PixelIndex {
  int row = 0;
  int col = 0;
};

/// Pixel center of an index, in continuous image coordinates.
inline Vec2 pixel_center(const PixelIndex& p) { return {p.col + 0.5, p.row + 0.5}; }

/// Projection of a world point. Empty if the point is behind the camera.
std::optional<Vec2> project(const Pose& pose, const Intrinsics& k, const Vec3& world);
/// Projection of a point already in the camera frame.
std::optional<Vec2> project_camera(const Intrinsics& k, const Vec3& cam);
/// Unit bearing (camera frame) through continuous pixel coordinates.
Vec3 bearing(const Intrinsics& k, const Vec2& pixel);

struct Aabb {
  Vec3 lo = Vec3::Constant(-1.0);
  Vec3 hi = Vec3::Constant(1.0);

  Vec3 center() const { return 0.5 * (lo + hi); }
  Vec3 size() const { return hi - lo; }
  double extent() const { return size().maxCoeff(); }
  bool contains(const Vec3& p, double slack = 0.0) const;
  /// Map into [-1, 1]^3 per axis.
  Vec3 normalize(const Vec3& p) const { return (2.0 * (p - lo).array() / size().array() - 1.0).matrix(); }
};

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = -Vec3::UnitZ();
  double t_near = 0.0;
  double t_far = 1.0;

  Vec3 at(double t) const { return origin + t * direction; }
  bool is_valid(double tol = 1e-9) const;
};

/// Rays through pixel centers. An empty subset means every pixel, row-major.
std::vector<Ray> generate_rays(const Pose& pose, const Intrinsics& k,
                               std::span<const PixelIndex> pixel_subset = {},
                               double t_near = 0.0, double t_far = 1e6);

/// Intersection of the ray with a box; empty when it misses.
std::optional<Ray> clip_to_box(const Ray& ray, const Aabb& box);

struct SampleBatch {
  Eigen::Matrix3Xd positions;  // interval midpoints
  Eigen::VectorXd t_start;
  Eigen::VectorXd t_end;
  std::vector<int> ray_index;
  std::vector<int> ray_offset;  // size rays + 1

  int size() const { return static_cast<int>(t_start.size()); }
  int ray_count() const { return static_cast<int>(ray_offset.size()) - 1; }
  std::pair<int, int> ray_range(int r) const { return {ray_offset[r], ray_offset[r + 1]}; }
};

/// n_per_ray equal bins over [t_near, t_far]. With jitter, each interval start
/// is drawn uniformly inside its bin (deterministic for a seed); without
/// jitter the intervals are the bins themselves.
SampleBatch stratified_samples(std::span<const Ray> rays, int n_per_ray, std::uint64_t seed,
                               bool jitter = true);

}  // namespace radloc
