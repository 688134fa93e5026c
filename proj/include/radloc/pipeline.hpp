#pragma once

// End-to-end localization pipeline: partition the training poses, train one
// field per partition, select feature dimensions, cluster poses for the
// coarse stage, localize every query and evaluate.

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "radloc/coarse.hpp"
#include "radloc/config.hpp"
#include "radloc/partition.hpp"
#include "radloc/projector.hpp"
#include "radloc/report.hpp"
#include "radloc/selection.hpp"
#include "radloc/synthscene.hpp"

namespace radloc {

struct PipelineState {
  PipelineConfig config;
  SyntheticScene scene;
  Intrinsics intrinsics;
  std::vector<PosedImage> train_images;
  std::vector<PosedImage> query_images;
  std::vector<int> train_labels;  // ground-truth layout groups

  ScenePartition partition;
  std::vector<PosePointCloud> clouds;
  std::vector<FieldParams> fields;        // one per partition
  std::vector<SelectionMask> masks;       // one per field
  std::vector<PoseGroup> groups;
  PlacePredictor place;
  std::vector<ProjectorParams> projectors;  // one per field, projector mode only
  std::vector<std::pair<std::string, double>> stage_seconds;

  /// Called after each stage with its name; the default persists nothing.
  std::function<void(const std::string&)> on_stage;
};

/// Synthesizes the scene and the posed training and query images.
PipelineState prepare(const PipelineConfig& cfg);

void run_partition(PipelineState& s);
void run_training(PipelineState& s);
void run_selection(PipelineState& s);
void run_coarse(PipelineState& s);
void run_projectors(PipelineState& s);

struct LocalizeOptions {
  /// Overrides the per-field masks; nullopt uses them (or all dimensions
  /// when selection is disabled).
  std::optional<SelectionMask> mask;
  std::optional<QueryFeatureSource> query_features;
  /// Correspondences of each query are written here when non-empty.
  std::filesystem::path correspondence_dir;
};

std::vector<QueryResult> localize(const PipelineState& s, const LocalizeOptions& opt = {});

/// Field that renders `pose` for evaluation: the allocated one, or the field
/// of the nearest training camera when that cell has no poses.
int heldout_field(const PipelineState& s, const Pose& pose);

/// Held-out PSNR at the true query poses, partition statistics and medians.
EvalReport evaluate(const PipelineState& s, std::vector<QueryResult> results, const std::string& query_features,
                    int feature_dims);

/// Writes config, trajectories, partition, checkpoints, masks, pose groups,
/// predictors and the report under cfg.output_dir. A failing stage keeps its
/// error code, names the stage in the message and leaves the artifacts of the
/// completed stages on disk.
EvalReport run_pipeline(const PipelineConfig& cfg);

/// Persists whatever `s` holds so far.
void save_state(const PipelineState& s, const std::filesystem::path& dir);

/// Regenerates the data and the partition (which must agree with a saved
/// partition.json), then loads every other artifact present in `dir`.
PipelineState load_state(const PipelineConfig& cfg, const std::filesystem::path& dir);

}  // namespace radloc
