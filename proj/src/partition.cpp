#include "radloc/partition.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <random>

#include <json.hpp>

#include "radloc/binary_io.hpp"
#include "radloc/errors.hpp"

namespace radloc {

using nlohmann::json;

OccupancyGrid::OccupancyGrid(int resolution, int pose_id) : resolution_(resolution), pose_id_(pose_id) {
  require(resolution >= 1 && resolution <= 256, ErrorCode::kInvalidArgument, "grid resolution out of range");
  words_.assign(static_cast<std::size_t>((voxel_count() + 63) / 64), 0);
}

int OccupancyGrid::count() const {
  int n = 0;
  for (auto w : words_) n += std::popcount(w);
  return n;
}

int OccupancyGrid::intersection_count(const OccupancyGrid& other) const {
  require(other.resolution_ == resolution_, ErrorCode::kInvalidArgument, "grid resolutions differ");
  int n = 0;
  for (std::size_t i = 0; i < words_.size(); ++i) n += std::popcount(words_[i] & other.words_[i]);
  return n;
}

int OccupancyGrid::union_count(const OccupancyGrid& other) const {
  require(other.resolution_ == resolution_, ErrorCode::kInvalidArgument, "grid resolutions differ");
  int n = 0;
  for (std::size_t i = 0; i < words_.size(); ++i) n += std::popcount(words_[i] | other.words_[i]);
  return n;
}

double jaccard_distance(const OccupancyGrid& a, const OccupancyGrid& b) {
  const int u = a.union_count(b);
  if (u == 0) return 0.0;
  return 1.0 - static_cast<double>(a.intersection_count(b)) / u;
}

int voxel_index(const Aabb& bounds, int resolution, const Vec3& p) {
  int idx[3];
  for (int a = 0; a < 3; ++a) {
    const double f = (p[a] - bounds.lo[a]) / (bounds.hi[a] - bounds.lo[a]);
    if (!(f >= 0.0 && f <= 1.0)) return -1;
    idx[a] = std::min(resolution - 1, static_cast<int>(f * resolution));
  }
  return (idx[2] * resolution + idx[1]) * resolution + idx[0];
}

PosePointCloud pose_point_cloud(const Pose& pose, const Intrinsics& k, const Aabb& bounds,
                                const OccupancyConfig& cfg, int pose_id) {
  require(cfg.pixel_step >= 1 && cfg.samples_per_ray >= 2, ErrorCode::kInvalidArgument, "invalid sampler config");
  std::vector<PixelIndex> pixels;
  for (int r = 0; r < k.height; r += cfg.pixel_step)
    for (int c = 0; c < k.width; c += cfg.pixel_step) pixels.push_back({r, c});
  std::vector<Ray> rays;
  for (const Ray& ray : generate_rays(pose, k, pixels))
    if (auto clipped = clip_to_box(ray, bounds)) rays.push_back(*clipped);
  if (rays.empty()) fail(ErrorCode::kFrustumMiss, "camera frustum misses the scene bounds");
  return {pose_id, stratified_samples(rays, cfg.samples_per_ray, 0, false).positions};
}

OccupancyGrid occupancy_from_points(const PosePointCloud& cloud, const Aabb& bounds, int resolution) {
  OccupancyGrid g(resolution, cloud.pose_id);
  for (Eigen::Index i = 0; i < cloud.points.cols(); ++i) {
    const int v = voxel_index(bounds, resolution, cloud.points.col(i));
    if (v >= 0) g.set(v);
  }
  return g;
}

OccupancyGrid pose_occupancy(const Pose& pose, const Intrinsics& k, const Aabb& bounds, const OccupancyConfig& cfg,
                             int pose_id) {
  return occupancy_from_points(pose_point_cloud(pose, k, bounds, cfg, pose_id), bounds, cfg.resolution);
}

std::string to_string(PartitionStrategy s) { return s == PartitionStrategy::kPoseAware ? "pose-aware" : "grid"; }

PartitionStrategy partition_strategy_from_string(const std::string& s) {
  if (s == "pose-aware") return PartitionStrategy::kPoseAware;
  if (s == "grid") return PartitionStrategy::kGrid;
  fail(ErrorCode::kInvalidArgument, "unknown partition strategy: " + s);
}

std::vector<int> ScenePartition::members(int id) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < nerf_id.size(); ++i)
    if (nerf_id[i] == id) out.push_back(static_cast<int>(i));
  return out;
}

int cluster_count(int pose_count, int poses_per_field) {
  require(pose_count >= 1 && poses_per_field >= 1, ErrorCode::kInvalidArgument, "counts must be positive");
  return std::max(1, (pose_count + poses_per_field - 1) / poses_per_field);
}

namespace {

struct Center {
  OccupancyGrid bits;
  std::vector<double> freq;
};

Center center_from_grid(const OccupancyGrid& g) {
  Center c{g, std::vector<double>(static_cast<std::size_t>(g.voxel_count()), 0.0)};
  for (int v = 0; v < g.voxel_count(); ++v)
    if (g.test(v)) c.freq[static_cast<std::size_t>(v)] = 1.0;
  return c;
}

OccupancyGrid threshold(const std::vector<double>& freq, int resolution) {
  OccupancyGrid g(resolution);
  for (std::size_t v = 0; v < freq.size(); ++v)
    if (freq[v] >= 0.5) g.set(static_cast<int>(v));
  return g;
}

int nearest_center(const OccupancyGrid& g, const std::vector<Center>& centers, double* dist = nullptr) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centers.size(); ++c) {
    const double d = jaccard_distance(g, centers[c].bits);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  if (dist) *dist = best_d;
  return best;
}

std::array<int, 3> grid_shape(int k) {
  int ny = static_cast<int>(std::sqrt(static_cast<double>(k)));
  while (k % ny != 0) --ny;
  return {k / ny, ny, 1};
}

}  // namespace

ScenePartition cluster_poses(const std::vector<OccupancyGrid>& grids, int k, std::uint64_t seed, const Aabb& bounds,
                             int max_rounds) {
  const int n = static_cast<int>(grids.size());
  require(n >= 1, ErrorCode::kInvalidArgument, "no poses to cluster");
  require(k >= 1 && k <= n, ErrorCode::kInvalidArgument, "cluster count must be in [1, pose count]");
  const int res = grids.front().resolution();
  for (const auto& g : grids) require(g.resolution() == res, ErrorCode::kInvalidArgument, "grid resolutions differ");

  // Farthest-point seeding.
  std::mt19937_64 rng(seed);
  std::vector<Center> centers;
  std::vector<double> min_d(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  int next = std::uniform_int_distribution<int>(0, n - 1)(rng);
  while (static_cast<int>(centers.size()) < k) {
    centers.push_back(center_from_grid(grids[static_cast<std::size_t>(next)]));
    for (int i = 0; i < n; ++i)
      min_d[static_cast<std::size_t>(i)] =
          std::min(min_d[static_cast<std::size_t>(i)], jaccard_distance(grids[static_cast<std::size_t>(i)], centers.back().bits));
    next = static_cast<int>(std::max_element(min_d.begin(), min_d.end()) - min_d.begin());
  }

  ScenePartition part;
  part.k = k;
  part.strategy = PartitionStrategy::kPoseAware;
  part.resolution = res;
  part.bounds = bounds;
  std::vector<int> assign(static_cast<std::size_t>(n), -1), prev;
  std::vector<double> dist(static_cast<std::size_t>(n));
  for (int round = 0; round < max_rounds; ++round) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i)
      assign[static_cast<std::size_t>(i)] = nearest_center(grids[static_cast<std::size_t>(i)], centers, &dist[static_cast<std::size_t>(i)]);

    // Re-seed empty clusters from the pose farthest from its center.
    for (int c = 0; c < k; ++c) {
      if (std::count(assign.begin(), assign.end(), c) > 0) continue;
      int far = -1;
      for (int i = 0; i < n; ++i) {
        const int a = assign[static_cast<std::size_t>(i)];
        if (std::count(assign.begin(), assign.end(), a) < 2) continue;
        if (far < 0 || dist[static_cast<std::size_t>(i)] > dist[static_cast<std::size_t>(far)]) far = i;
      }
      if (far < 0) break;
      centers[static_cast<std::size_t>(c)] = center_from_grid(grids[static_cast<std::size_t>(far)]);
      assign[static_cast<std::size_t>(far)] = c;
      dist[static_cast<std::size_t>(far)] = 0.0;
    }
    double objective = 0.0;
    for (double d : dist) objective += d;
    part.objective_history.push_back(objective);
    if (assign == prev) break;
    prev = assign;

    for (int c = 0; c < k; ++c) {
      std::vector<double> freq(static_cast<std::size_t>(grids.front().voxel_count()), 0.0);
      std::vector<int> mem;
      for (int i = 0; i < n; ++i)
        if (assign[static_cast<std::size_t>(i)] == c) mem.push_back(i);
      if (mem.empty()) continue;
      for (int i : mem) {
        const auto& g = grids[static_cast<std::size_t>(i)];
        for (int v = 0; v < g.voxel_count(); ++v)
          if (g.test(v)) freq[static_cast<std::size_t>(v)] += 1.0;
      }
      for (double& f : freq) f /= static_cast<double>(mem.size());
      const OccupancyGrid cand = threshold(freq, res);
      double old_cost = 0.0, new_cost = 0.0;
      for (int i : mem) {
        old_cost += dist[static_cast<std::size_t>(i)];
        new_cost += jaccard_distance(grids[static_cast<std::size_t>(i)], cand);
      }
      if (new_cost <= old_cost) centers[static_cast<std::size_t>(c)] = {cand, std::move(freq)};
    }
  }
  part.nerf_id = assign;
  for (auto& c : centers) part.center_frequency.push_back(std::move(c.freq));
  return part;
}

ScenePartition grid_partition(const std::vector<PosePointCloud>& clouds, int k, const Aabb& bounds, int resolution) {
  require(k >= 1, ErrorCode::kInvalidArgument, "cluster count must be >= 1");
  ScenePartition part;
  part.k = k;
  part.strategy = PartitionStrategy::kGrid;
  part.resolution = resolution;
  part.bounds = bounds;
  part.grid_cells = grid_shape(k);
  for (const auto& cloud : clouds) {
    std::vector<int> hist(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < cloud.points.cols(); ++i) ++hist[static_cast<std::size_t>(grid_cell(part, cloud.points.col(i)))];
    part.nerf_id.push_back(static_cast<int>(std::max_element(hist.begin(), hist.end()) - hist.begin()));
  }
  return part;
}

int grid_cell(const ScenePartition& partition, const Vec3& p) {
  const Aabb& b = partition.bounds;
  int idx[3];
  for (int a = 0; a < 3; ++a) {
    const int n = partition.grid_cells[static_cast<std::size_t>(a)];
    const double f = (p[a] - b.lo[a]) / (b.hi[a] - b.lo[a]);
    idx[a] = std::clamp(static_cast<int>(std::floor(f * n)), 0, n - 1);
  }
  return (idx[2] * partition.grid_cells[1] + idx[1]) * partition.grid_cells[0] + idx[0];
}

int num_nerf(const Pose& pose, const Intrinsics& k, const ScenePartition& partition, const OccupancyConfig& cfg) {
  require(pose.is_valid(), ErrorCode::kInvalidArgument, "invalid pose");
  if (partition.strategy == PartitionStrategy::kPoseAware) return 1;
  const PosePointCloud cloud = pose_point_cloud(pose, k, partition.bounds, cfg);
  std::vector<std::uint8_t> touched(static_cast<std::size_t>(partition.k), 0);
  for (Eigen::Index i = 0; i < cloud.points.cols(); ++i) touched[static_cast<std::size_t>(grid_cell(partition, cloud.points.col(i)))] = 1;
  return static_cast<int>(std::count(touched.begin(), touched.end(), std::uint8_t{1}));
}

int allocate(const Pose& pose, const Intrinsics& k, const ScenePartition& partition, const OccupancyConfig& cfg) {
  const PosePointCloud cloud = pose_point_cloud(pose, k, partition.bounds, cfg);
  if (partition.strategy == PartitionStrategy::kGrid) {
    std::vector<int> hist(static_cast<std::size_t>(partition.k), 0);
    for (Eigen::Index i = 0; i < cloud.points.cols(); ++i) ++hist[static_cast<std::size_t>(grid_cell(partition, cloud.points.col(i)))];
    return static_cast<int>(std::max_element(hist.begin(), hist.end()) - hist.begin());
  }
  require(static_cast<int>(partition.center_frequency.size()) == partition.k, ErrorCode::kInvalidArgument,
          "partition has no cluster centers");
  const OccupancyGrid g = occupancy_from_points(cloud, partition.bounds, partition.resolution);
  std::vector<Center> centers;
  for (const auto& f : partition.center_frequency) centers.push_back({threshold(f, partition.resolution), {}});
  return nearest_center(g, centers);
}

Compactness compactness(const std::vector<int>& assignment, int k, const std::vector<PosePointCloud>& clouds) {
  require(assignment.size() == clouds.size(), ErrorCode::kInvalidArgument, "assignment and cloud counts differ");
  std::vector<Vec3> sum(static_cast<std::size_t>(k), Vec3::Zero());
  std::vector<double> sq(static_cast<std::size_t>(k), 0.0);
  Compactness out;
  out.counts.assign(static_cast<std::size_t>(k), 0);
  for (std::size_t p = 0; p < clouds.size(); ++p) {
    const int c = assignment[p];
    require(c >= 0 && c < k, ErrorCode::kInvalidArgument, "cluster id out of range");
    const auto& pts = clouds[p].points;
    sum[static_cast<std::size_t>(c)] += pts.rowwise().sum();
    sq[static_cast<std::size_t>(c)] += pts.squaredNorm();
    out.counts[static_cast<std::size_t>(c)] += pts.cols();
  }
  for (int c = 0; c < k; ++c) {
    const double n = static_cast<double>(out.counts[static_cast<std::size_t>(c)]);
    const double tr = n > 0 ? sq[static_cast<std::size_t>(c)] / n - (sum[static_cast<std::size_t>(c)] / n).squaredNorm() : 0.0;
    out.trace.push_back(std::max(0.0, tr));
    out.scatter += n * out.trace.back();
  }
  return out;
}

std::string encode_partition(const ScenePartition& p) {
  json j;
  j["version"] = 1;
  j["K"] = p.k;
  j["strategy"] = to_string(p.strategy);
  j["nerf_id"] = p.nerf_id;
  j["resolution"] = p.resolution;
  j["bounds"] = {{"lo", {p.bounds.lo.x(), p.bounds.lo.y(), p.bounds.lo.z()}},
                 {"hi", {p.bounds.hi.x(), p.bounds.hi.y(), p.bounds.hi.z()}}};
  j["grid_cells"] = p.grid_cells;
  return j.dump(2) + "\n";
}

ScenePartition decode_partition(const std::string& text) {
  try {
    const json j = json::parse(text);
    require(j.at("version").get<int>() == 1, ErrorCode::kIo, "unsupported partition version");
    ScenePartition p;
    p.k = j.at("K").get<int>();
    p.strategy = partition_strategy_from_string(j.at("strategy").get<std::string>());
    p.nerf_id = j.at("nerf_id").get<std::vector<int>>();
    p.resolution = j.at("resolution").get<int>();
    const auto lo = j.at("bounds").at("lo").get<std::array<double, 3>>();
    const auto hi = j.at("bounds").at("hi").get<std::array<double, 3>>();
    p.bounds.lo = Vec3(lo[0], lo[1], lo[2]);
    p.bounds.hi = Vec3(hi[0], hi[1], hi[2]);
    p.grid_cells = j.at("grid_cells").get<std::array<int, 3>>();
    for (int id : p.nerf_id) require(id >= 0 && id < p.k, ErrorCode::kIo, "NeRF_ID out of range");
    return p;
  } catch (const json::exception& e) {
    fail(ErrorCode::kIo, std::string("bad partition file: ") + e.what());
  }
}

void save_partition(const std::filesystem::path& path, const ScenePartition& p) {
  io::write_text(path, encode_partition(p));
}

ScenePartition load_partition(const std::filesystem::path& path) { return decode_partition(io::read_text(path)); }

}  // namespace radloc
