#pragma once

// Evaluation report: per-query pose errors and timings, medians over the
// successful localizations, held-out PSNR and partition statistics.

#include <filesystem>
#include <string>
#include <vector>

#include "radloc/synthscene.hpp"

namespace radloc {

/// 10 log10(1 / MSE) over all channels; +inf for identical images.
double psnr(const RgbImage& rendered, const RgbImage& truth);

struct StageTimes {
  double coarse = 0.0;          // place prediction
  double feature_render = 0.0;  // database render and lifting
  double query_features = 0.0;
  double match = 0.0;
  double pnp = 0.0;             // RANSAC and refinement
};

struct QueryResult {
  int query_id = 0;
  bool localized = false;  // false: RANSAC failed, pose is the coarse fallback
  std::string failure;
  int coarse_group = -1;
  int nerf_id = -1;
  double translation_error = 0.0;  // scene units
  double rotation_error_deg = 0.0;
  int num_matches = 0;
  int inliers = 0;
  double wall_clock = 0.0;  // seconds, whole query
  StageTimes times;
};

struct EvalReport {
  static constexpr int kVersion = 1;
  std::string query_features;
  int feature_dims = 0;  // dimensions used for matching
  double scene_extent = 0.0;
  std::vector<QueryResult> queries;
  int localized = 0;
  int failed = 0;
  double median_translation_error = 0.0;  // over localized queries
  double median_rotation_error_deg = 0.0;
  std::vector<double> heldout_psnr;  // per query, rendered at the true pose
  double mean_heldout_psnr = 0.0;
  double avg_num_nerf = 0.0;
  double compactness_scatter = 0.0;
  std::vector<std::pair<std::string, double>> stage_seconds;  // pipeline stages in order
  double total_seconds = 0.0;

  /// Fills counts and medians from `queries`.
  void summarize();
};

struct TimingRow {
  std::string stage;
  double seconds = 0.0;
};

/// Per-query stages summed over queries, then the total query wall-clock.
std::vector<TimingRow> timing_breakdown(const EvalReport& report);
std::string timing_csv(const std::vector<TimingRow>& rows);

std::string encode_report(const EvalReport& report);
EvalReport decode_report(const std::string& text);
/// Human-readable table.
std::string report_table(const EvalReport& report);

/// report.json, report.txt and timing.csv in `dir`.
void write_report(const std::filesystem::path& dir, const EvalReport& report);

}  // namespace radloc
