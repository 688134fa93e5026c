#pragma once

// Pose-aware scene partitioning. Every training pose is turned into a voxel
// occupancy grid of the sample points along its rays; poses are clustered by
// Jaccard dissimilarity of those grids, and each pose (with all of its
// samples) is allocated to exactly one sub-field.

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "radloc/geometry.hpp"

namespace radloc {

struct OccupancyConfig {
  int resolution = 32;     // voxels per axis
  int pixel_step = 8;      // rays through every pixel_step-th pixel
  int samples_per_ray = 32;
};

class OccupancyGrid {
 public:
  OccupancyGrid() = default;
  explicit OccupancyGrid(int resolution, int pose_id = -1);

  int resolution() const { return resolution_; }
  int pose_id() const { return pose_id_; }
  int voxel_count() const { return resolution_ * resolution_ * resolution_; }
  void set(int voxel) { words_[static_cast<std::size_t>(voxel >> 6)] |= std::uint64_t{1} << (voxel & 63); }
  bool test(int voxel) const { return (words_[static_cast<std::size_t>(voxel >> 6)] >> (voxel & 63)) & 1u; }
  int count() const;
  int intersection_count(const OccupancyGrid& other) const;
  int union_count(const OccupancyGrid& other) const;
  const std::vector<std::uint64_t>& words() const { return words_; }

  bool operator==(const OccupancyGrid&) const = default;

 private:
  int resolution_ = 0;
  int pose_id_ = -1;
  std::vector<std::uint64_t> words_;
};

/// 1 - |a & b| / |a | b|; zero for two empty grids.
double jaccard_distance(const OccupancyGrid& a, const OccupancyGrid& b);

/// Voxel containing p, or -1 outside the bounds.
int voxel_index(const Aabb& bounds, int resolution, const Vec3& p);

struct PosePointCloud {
  int pose_id = -1;
  Eigen::Matrix3Xd points;
};

/// Unjittered sample midpoints along a subsampled ray grid, clipped to the
/// scene bounds. Raises kFrustumMiss when no ray enters the bounds.
PosePointCloud pose_point_cloud(const Pose& pose, const Intrinsics& k, const Aabb& bounds,
                                const OccupancyConfig& cfg, int pose_id = -1);
OccupancyGrid occupancy_from_points(const PosePointCloud& cloud, const Aabb& bounds, int resolution);
OccupancyGrid pose_occupancy(const Pose& pose, const Intrinsics& k, const Aabb& bounds, const OccupancyConfig& cfg,
                             int pose_id = -1);

enum class PartitionStrategy { kPoseAware, kGrid };

std::string to_string(PartitionStrategy s);
PartitionStrategy partition_strategy_from_string(const std::string& s);

struct ScenePartition {
  int k = 0;
  PartitionStrategy strategy = PartitionStrategy::kPoseAware;
  std::vector<int> nerf_id;  // per training pose
  int resolution = 32;
  Aabb bounds;
  std::array<int, 3> grid_cells{1, 1, 1};  // grid strategy only
  /// Pose-aware only: per-voxel member frequency of each cluster.
  std::vector<std::vector<double>> center_frequency;
  /// Total dissimilarity to the assigned centers after each Lloyd round.
  std::vector<double> objective_history;

  std::vector<int> members(int id) const;
};

/// ceil(pose_count / poses_per_field), at least 1.
int cluster_count(int pose_count, int poses_per_field);

/// K-means over occupancy grids with farthest-point seeding. Centers are
/// member frequencies thresholded at 0.5; a center update that would raise a
/// cluster's dissimilarity is not applied, so the objective never increases.
ScenePartition cluster_poses(const std::vector<OccupancyGrid>& grids, int k, std::uint64_t seed,
                             const Aabb& bounds, int max_rounds = 100);

/// Axis-aligned cells (nx * ny * 1 = k, as square as possible). Each pose is
/// labelled with the cell holding most of its samples.
ScenePartition grid_partition(const std::vector<PosePointCloud>& clouds, int k, const Aabb& bounds,
                              int resolution = 32);

/// Cell of a point under the grid strategy.
int grid_cell(const ScenePartition& partition, const Vec3& p);

/// Distinct sub-fields touched when rendering from `pose`: 1 under the
/// pose-aware strategy, distinct cells under the grid strategy.
int num_nerf(const Pose& pose, const Intrinsics& k, const ScenePartition& partition, const OccupancyConfig& cfg);

/// Sub-field for a new pose: nearest center (pose-aware) or majority cell.
int allocate(const Pose& pose, const Intrinsics& k, const ScenePartition& partition, const OccupancyConfig& cfg);

struct Compactness {
  std::vector<double> trace;  // per cluster, trace of the sample covariance
  std::vector<long> counts;   // samples per cluster
  double scatter = 0.0;       // sum of counts * trace
};

Compactness compactness(const std::vector<int>& assignment, int k, const std::vector<PosePointCloud>& clouds);

/// JSON: version, K, strategy, nerf_id, resolution, bounds, grid_cells.
std::string encode_partition(const ScenePartition& p);
ScenePartition decode_partition(const std::string& text);
void save_partition(const std::filesystem::path& path, const ScenePartition& p);
ScenePartition load_partition(const std::filesystem::path& path);

}  // namespace radloc
