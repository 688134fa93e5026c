#include "radloc/geometry.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include "radloc/binary_io.hpp"
#include "radloc/errors.hpp"

namespace radloc {

bool Pose::is_valid(double tol) const {
  if (!rotation.allFinite() || !translation.allFinite()) return false;
  const Mat3 gram = rotation.transpose() * rotation;
  if ((gram - Mat3::Identity()).cwiseAbs().maxCoeff() > tol) return false;
  return std::abs(rotation.determinant() - 1.0) <= tol;
}

Pose compose(const Pose& a, const Pose& b) {
  return {a.rotation * b.rotation, a.rotation * b.translation + a.translation};
}

Pose inverse(const Pose& p) {
  const Mat3 rt = p.rotation.transpose();
  return {rt, -(rt * p.translation)};
}

PoseError pose_error(const Pose& estimate, const Pose& truth) {
  PoseError e;
  e.translation = (estimate.translation - truth.translation).norm();
  // trace(A^T B) is symmetric in A and B, so the rotational part is too.
  // atan2 of the skew and symmetric parts keeps small angles accurate,
  // where acos of the trace alone bottoms out near 1e-6 degrees.
  const Mat3 m = estimate.rotation.transpose() * truth.rotation;
  const double c = (m.trace() - 1.0) / 2.0;
  const double s = 0.5 * Vec3(m(2, 1) - m(1, 2), m(0, 2) - m(2, 0), m(1, 0) - m(0, 1)).norm();
  e.rotation_deg = std::atan2(s, c) * 180.0 / std::numbers::pi;
  return e;
}

Mat3 rotation_x(double a) { return Eigen::AngleAxisd(a, Vec3::UnitX()).toRotationMatrix(); }
Mat3 rotation_y(double a) { return Eigen::AngleAxisd(a, Vec3::UnitY()).toRotationMatrix(); }
Mat3 rotation_z(double a) { return Eigen::AngleAxisd(a, Vec3::UnitZ()).toRotationMatrix(); }

Mat3 axis_angle(const Vec3& axis, double radians) {
  require(axis.norm() > 0.0, ErrorCode::kInvalidArgument, "zero rotation axis");
  return Eigen::AngleAxisd(radians, axis.normalized()).toRotationMatrix();
}

Mat3 exp_so3(const Vec3& omega) {
  const double theta = omega.norm();
  if (theta < 1e-12) {
    Mat3 k;
    k << 0, -omega.z(), omega.y(), omega.z(), 0, -omega.x(), -omega.y(), omega.x(), 0;
    return orthonormalize(Mat3::Identity() + k);
  }
  return Eigen::AngleAxisd(theta, omega / theta).toRotationMatrix();
}

Mat3 orthonormalize(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 r = svd.matrixU() * svd.matrixV().transpose();
  if (r.determinant() < 0) {
    Mat3 u = svd.matrixU();
    u.col(2) *= -1.0;
    r = u * svd.matrixV().transpose();
  }
  return r;
}

Pose look_at(const Vec3& eye, const Vec3& target, const Vec3& up) {
  const Vec3 forward = (target - eye).normalized();
  require(forward.allFinite(), ErrorCode::kInvalidArgument, "look_at: eye equals target");
  Vec3 right = forward.cross(up);
  require(right.norm() > 1e-9, ErrorCode::kInvalidArgument, "look_at: up parallel to view");
  right.normalize();
  const Vec3 cam_up = right.cross(forward);
  Pose p;
  p.rotation.col(0) = right;
  p.rotation.col(1) = cam_up;
  p.rotation.col(2) = -forward;
  p.translation = eye;
  return p;
}

void append_pose_bytes(const Pose& p, std::vector<std::uint8_t>& out) {
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) io::put<double>(out, p.rotation(r, c));
  for (int i = 0; i < 3; ++i) io::put<double>(out, p.translation[i]);
}

Pose pose_from_bytes(std::span<const std::uint8_t> bytes) {
  require(bytes.size() == 96, ErrorCode::kIo, "pose record must be 96 bytes");
  io::Reader rd(bytes);
  Pose p;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) p.rotation(r, c) = rd.get<double>();
  for (int i = 0; i < 3; ++i) p.translation[i] = rd.get<double>();
  return p;
}

Intrinsics Intrinsics::from_fov(int width, int height, double horizontal_fov_deg) {
  Intrinsics k;
  const double half = horizontal_fov_deg * std::numbers::pi / 360.0;
  k.fx = 0.5 * width / std::tan(half);
  k.fy = k.fx;
  k.cx = 0.5 * width;
  k.cy = 0.5 * height;
  k.width = width;
  k.height = height;
  k.validate();
  return k;
}

void Intrinsics::validate() const {
  require(width > 0 && height > 0, ErrorCode::kInvalidArgument, "image size must be positive");
  require(fx > 0 && fy > 0, ErrorCode::kInvalidArgument, "focal lengths must be positive");
  require(cx >= 0 && cx < width && cy >= 0 && cy < height, ErrorCode::kInvalidArgument,
          "principal point outside the image");
}

std::optional<Vec2> project_camera(const Intrinsics& k, const Vec3& cam) {
  const double depth = -cam.z();
  if (depth <= 1e-12) return std::nullopt;
  return Vec2(k.cx + k.fx * cam.x() / depth, k.cy - k.fy * cam.y() / depth);
}

std::optional<Vec2> project(const Pose& pose, const Intrinsics& k, const Vec3& world) {
  return project_camera(k, pose.apply_inverse(world));
}

Vec3 bearing(const Intrinsics& k, const Vec2& pixel) {
  return Vec3((pixel.x() - k.cx) / k.fx, -(pixel.y() - k.cy) / k.fy, -1.0).normalized();
}

bool Aabb::contains(const Vec3& p, double slack) const {
  return (p.array() >= lo.array() - slack).all() && (p.array() <= hi.array() + slack).all();
}

bool Ray::is_valid(double tol) const {
  return std::abs(direction.norm() - 1.0) <= tol && t_near >= 0.0 && t_near < t_far;
}

std::vector<Ray> generate_rays(const Pose& pose, const Intrinsics& k,
                               std::span<const PixelIndex> pixel_subset, double t_near,
                               double t_far) {
  k.validate();
  std::vector<Ray> rays;
  auto emit = [&](const PixelIndex& px) {
    Ray r;
    r.origin = pose.translation;
    r.direction = (pose.rotation * bearing(k, pixel_center(px))).normalized();
    r.t_near = t_near;
    r.t_far = t_far;
    rays.push_back(r);
  };
  if (pixel_subset.empty()) {
    rays.reserve(k.pixel_count());
    for (int row = 0; row < k.height; ++row)
      for (int col = 0; col < k.width; ++col) emit({row, col});
  } else {
    rays.reserve(pixel_subset.size());
    for (const auto& px : pixel_subset) {
      if (px.row < 0 || px.row >= k.height || px.col < 0 || px.col >= k.width)
        fail(ErrorCode::kOutOfBounds, "pixel (" + std::to_string(px.row) + ", " +
                                          std::to_string(px.col) + ") outside the image");
      emit(px);
    }
  }
  return rays;
}

std::optional<Ray> clip_to_box(const Ray& ray, const Aabb& box) {
  double t0 = ray.t_near;
  double t1 = ray.t_far;
  for (int a = 0; a < 3; ++a) {
    const double d = ray.direction[a];
    const double o = ray.origin[a];
    if (std::abs(d) < 1e-15) {
      if (o < box.lo[a] || o > box.hi[a]) return std::nullopt;
      continue;
    }
    double ta = (box.lo[a] - o) / d;
    double tb = (box.hi[a] - o) / d;
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  if (!(t1 > t0 + 1e-9)) return std::nullopt;
  Ray out = ray;
  out.t_near = t0;
  out.t_far = t1;
  return out;
}

SampleBatch stratified_samples(std::span<const Ray> rays, int n_per_ray, std::uint64_t seed,
                               bool jitter) {
  require(n_per_ray >= 2, ErrorCode::kInvalidArgument, "need at least 2 samples per ray");
  const int n_rays = static_cast<int>(rays.size());
  const int total = n_rays * n_per_ray;
  SampleBatch batch;
  batch.positions.resize(3, total);
  batch.t_start.resize(total);
  batch.t_end.resize(total);
  batch.ray_index.resize(total);
  batch.ray_offset.resize(n_rays + 1);

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<double> starts(n_per_ray);
  for (int r = 0; r < n_rays; ++r) {
    const Ray& ray = rays[r];
    require(ray.t_near >= 0.0 && ray.t_near < ray.t_far, ErrorCode::kInvalidArgument,
            "ray interval must satisfy 0 <= t_near < t_far");
    const double bin = (ray.t_far - ray.t_near) / n_per_ray;
    for (int k = 0; k < n_per_ray; ++k) {
      const double u = jitter ? unif(rng) : 0.0;
      starts[k] = ray.t_near + (k + u) * bin;
    }
    const int base = r * n_per_ray;
    batch.ray_offset[r] = base;
    for (int k = 0; k < n_per_ray; ++k) {
      const int i = base + k;
      const double t0 = starts[k];
      const double t1 = (k + 1 < n_per_ray) ? starts[k + 1] : ray.t_far;
      batch.t_start[i] = t0;
      batch.t_end[i] = t1;
      batch.positions.col(i) = ray.at(0.5 * (t0 + t1));
      batch.ray_index[i] = r;
    }
  }
  batch.ray_offset[n_rays] = total;
  return batch;
}

namespace io {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::string read_text(const std::filesystem::path& path) {
  auto bytes = read_file(path);
  return {bytes.begin(), bytes.end()};
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace io

}  // namespace radloc
