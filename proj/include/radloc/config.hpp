#pragma once

// Pipeline configuration. JSON with one object per stage; every key is
// optional, unknown keys are rejected.

#include <cstdint>
#include <filesystem>
#include <string>

#include "radloc/coarse.hpp"
#include "radloc/field.hpp"
#include "radloc/partition.hpp"
#include "radloc/pnp.hpp"
#include "radloc/projector.hpp"
#include "radloc/selection.hpp"
#include "radloc/synthscene.hpp"
#include "radloc/trainer.hpp"

namespace radloc {

enum class QueryFeatureSource { kOracle, kProjector };

std::string to_string(QueryFeatureSource s);
QueryFeatureSource query_feature_source_from_string(const std::string& s);

struct SceneConfig {
  TrajectoryLayout layout;
  int train_poses = 100;
  int query_poses = 10;
  int width = 64;
  int height = 64;
  double fov_deg = 60.0;
  std::uint64_t train_seed = 1;
  std::uint64_t query_seed = 2;

  Intrinsics intrinsics() const { return Intrinsics::from_fov(width, height, fov_deg); }
};

struct PartitionSettings {
  PartitionStrategy strategy = PartitionStrategy::kPoseAware;
  int poses_per_field = 50;
  OccupancyConfig occupancy;
};

struct SelectionSettings {
  int budget = 10;
  SelectionMode mode = SelectionMode::kExactBudget;
  CostMetric metric = CostMetric::kAbsolute;
  CostNormalization normalization = CostNormalization::kDispersion;
  int views = 8;  // database poses used for pair generation
  PairGenConfig pairs;
  bool enabled = true;  // false keeps all D dimensions
};

struct MatchSettings {
  int stride = 2;
  int samples_per_ray = 32;
  double opacity_threshold = 0.5;
  QueryFeatureSource query_features = QueryFeatureSource::kOracle;
};

struct CoarseSettings {
  int k_spatial = 4;
  int k_orient = 2;
  PlaceConfig place;
};

struct PipelineConfig {
  SceneConfig scene;
  FieldConfig field;
  TrainConfig train;
  PartitionSettings partition;
  SelectionSettings selection;
  MatchSettings match;
  ProjectorConfig projector;
  CoarseSettings coarse;
  RansacConfig ransac;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "radloc_out";

  /// Checks every sub-config against its module's preconditions.
  void validate() const;
  /// Replaces every stage seed by one derived from `seed`.
  void reseed(std::uint64_t seed);
};

PipelineConfig parse_config(const std::string& json_text);
PipelineConfig load_config(const std::filesystem::path& path);
std::string encode_config(const PipelineConfig& cfg);

}  // namespace radloc
