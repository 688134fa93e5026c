#pragma once

// Analytic scenes with exact color, depth and visibility, used as ground truth
// for training and for every accuracy check downstream.

#include <filesystem>
#include <limits>
#include <string>
#include <variant>
#include <vector>

#include "radloc/geometry.hpp"

namespace radloc {

struct Texture {
  enum class Kind { kConstant, kRampChecker };
  Kind kind = Kind::kConstant;
  Vec3 color = Vec3::Constant(0.5);
  // kRampChecker: red/green ramp across `ramp_box` in x/y, blue soft checker.
  Aabb ramp_box;
  double checker_cell = 2.5;

  Vec3 evaluate(const Vec3& p) const;

  static Texture constant(const Vec3& rgb) { return {Kind::kConstant, rgb, {}, 0.0}; }
  static Texture ramp_checker(const Aabb& box, double cell) {
    return {Kind::kRampChecker, Vec3::Zero(), box, cell};
  }
};

struct Plane {
  Vec3 point = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();
  double half_extent = std::numeric_limits<double>::infinity();  // square patch
  Texture texture;
};

struct Sphere {
  Vec3 center = Vec3::Zero();
  double radius = 1.0;
  Texture texture;
};

struct Box {
  Aabb box;
  Texture texture;
};

using Primitive = std::variant<Plane, Sphere, Box>;

struct SyntheticScene {
  std::vector<Primitive> primitives;
  Aabb bounds;
  double ambient = 1.0;

  void validate() const;
};

/// 20-unit textured ground plane with three colored spheres.
SyntheticScene make_reference_scene();

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<double> data;  // row-major, RGB interleaved

  RgbImage() = default;
  RgbImage(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, 0.0) {}

  double* pixel(int row, int col) { return data.data() + (static_cast<std::size_t>(row) * width + col) * 3; }
  const double* pixel(int row, int col) const {
    return data.data() + (static_cast<std::size_t>(row) * width + col) * 3;
  }
  Vec3 rgb(int row, int col) const {
    const double* p = pixel(row, col);
    return {p[0], p[1], p[2]};
  }
};

struct PosedImage {
  RgbImage image;
  Pose pose;
  Intrinsics intrinsics;
  std::vector<double> depth;  // ray distance; +inf on miss
};

struct Hit {
  double t = std::numeric_limits<double>::infinity();
  Vec3 color = Vec3::Zero();
  bool hit() const { return t < std::numeric_limits<double>::infinity(); }
};

Hit intersect(const SyntheticScene& scene, const Ray& ray);

/// Nearest-hit ray casting through every pixel center.
PosedImage raytrace(const SyntheticScene& scene, const Pose& pose, const Intrinsics& k);

enum class LayoutKind { kRing, kGrid, kMultiSite };

struct TrajectoryLayout {
  LayoutKind kind = LayoutKind::kMultiSite;
  int sites = 4;
  int headings = 2;
  double site_radius = 5.5;
  double height = 5.0;
  double pitch_deg = 35.0;
  double heading_spread_deg = 40.0;
  double position_jitter = 0.4;
  double angle_jitter_deg = 5.0;
};

struct Trajectory {
  std::vector<Pose> poses;
  std::vector<int> labels;  // ground-truth (site, heading) group; multi-site only
};

Trajectory make_trajectory(const SyntheticScene& scene, const TrajectoryLayout& layout, int count,
                           std::uint64_t seed);

/// Trajectory file: concatenated 96-byte pose records.
void save_trajectory(const std::filesystem::path& path, const std::vector<Pose>& poses);
std::vector<Pose> load_trajectory(const std::filesystem::path& path);

/// RGB as binary PPM (P6) plus a raw float32 depth sidecar at `<stem>.depth`.
void save_posed_image(const std::filesystem::path& ppm_path, const PosedImage& img);
RgbImage load_ppm(const std::filesystem::path& path);

}  // namespace radloc
