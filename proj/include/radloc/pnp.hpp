#pragma once

// Camera pose from 2D-3D correspondences: three-point solver, RANSAC with a
// fourth-point check, and Gauss-Newton refinement of reprojection error.

#include <cstdint>
#include <span>
#include <vector>

#include "radloc/geometry.hpp"
#include "radloc/matcher.hpp"

namespace radloc {

struct RansacConfig {
  int max_iterations = 2000;
  double threshold = 2.0;  // pixels
  double confidence = 0.999;
  std::uint64_t seed = 0;
  int refine_iterations = 10;

  void validate() const;
};

struct PoseEstimate {
  Pose pose;                 // camera-to-frame of the 3D points
  std::vector<int> inliers;  // ascending correspondence indices
  double mean_error = 0.0;   // pixels, over inliers
  int iterations = 0;        // hypotheses evaluated
};

/// All real solutions (at most four) for three non-collinear points.
std::vector<Pose> solve_p3p(std::span<const Vec3> points, std::span<const Vec2> pixels, const Intrinsics& k);

double reprojection_error(const Pose& pose, const Intrinsics& k, const Vec3& point, const Vec2& pixel);

/// Mean reprojection error over `subset` (all points when empty); infinite
/// when a point falls behind the camera.
double mean_reprojection_error(const Pose& pose, const Intrinsics& k, std::span<const Vec3> points,
                               std::span<const Vec2> pixels, std::span<const int> subset = {});

/// Gauss-Newton over an axis-angle increment and translation on `subset`.
/// Returns the input pose when the mean error would increase.
Pose refine_pose(const Pose& pose, const Intrinsics& k, std::span<const Vec3> points, std::span<const Vec2> pixels,
                 std::span<const int> subset, int iterations = 10);

PoseEstimate ransac_pnp(std::span<const Vec3> points, std::span<const Vec2> pixels, const Intrinsics& k,
                        const RansacConfig& cfg);
/// Uses pixel centers of the correspondence grid positions.
PoseEstimate ransac_pnp(const Correspondences& corrs, const Intrinsics& k, const RansacConfig& cfg);

/// World pose = initial * relative.
Pose compose_with_initial(const PoseEstimate& relative, const Pose& initial);

}  // namespace radloc
