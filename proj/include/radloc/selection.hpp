#pragma once

// Binary selection of intermediate feature dimensions.
//
// Ground-truth 2D-3D pairs are generated from nearby renders of the field,
// per-dimension discrepancies are accumulated, and the binary program
//
//   minimize  sum_d s_d c_d / sum_d s_d   s.t.  s_d in {0,1},  1 <= sum_d s_d <= N_s
//
// is solved exactly. The exact-budget variant fixes sum_d s_d = N_s and
// minimizes sum_d s_d c_d.

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "radloc/field.hpp"
#include "radloc/geometry.hpp"

namespace radloc {

enum class SelectionMode { kAsWritten, kExactBudget };

std::string to_string(SelectionMode mode);
SelectionMode selection_mode_from_string(const std::string& s);

class SelectionMask {
 public:
  SelectionMask() = default;
  SelectionMask(std::vector<std::uint8_t> bits, int budget, SelectionMode mode);

  /// Mask selecting every dimension.
  static SelectionMask all(int dim, SelectionMode mode = SelectionMode::kExactBudget);
  static SelectionMask from_indices(int dim, const std::vector<int>& indices, int budget,
                                    SelectionMode mode = SelectionMode::kExactBudget);

  int dim() const { return static_cast<int>(bits_.size()); }
  int budget() const { return budget_; }
  SelectionMode mode() const { return mode_; }
  int selected_count() const;
  bool selected(int d) const { return bits_[d] != 0; }
  const std::vector<std::uint8_t>& bits() const { return bits_; }
  /// Selected dimensions, ascending.
  std::vector<int> indices() const;

  bool operator==(const SelectionMask&) const = default;

 private:
  std::vector<std::uint8_t> bits_;
  int budget_ = 0;
  SelectionMode mode_ = SelectionMode::kExactBudget;
};

/// Text format: "D N_s mode" then D space-separated 0/1 values.
std::string encode_mask(const SelectionMask& mask);
SelectionMask decode_mask(const std::string& text);
void save_mask(const std::filesystem::path& path, const SelectionMask& mask);
SelectionMask load_mask(const std::filesystem::path& path);

struct MatchPair {
  int i = 0;  // 2D feature (pixel grid) index
  int j = 0;  // 3D feature index
  Eigen::VectorXd f2d;
  Eigen::VectorXd f3d;
};

struct MatchPairSet {
  std::vector<MatchPair> pairs;
  Pose query_pose;
  Pose init_pose;
  int candidates = 0;  // mutual-NN candidates before reprojection filtering

  int dim() const { return pairs.empty() ? 0 : static_cast<int>(pairs.front().f2d.size()); }
};

struct PairGenConfig {
  double translation_radius = 0.4;  // 2% of a 20-unit scene
  double max_rotation_deg = 5.0;
  double reproj_threshold = 3.0;    // pixels
  int stride = 2;
  int samples_per_ray = 32;
  double opacity_threshold = 0.5;
  int min_pairs = 20;
};

/// Uniform translation in a ball and uniform-axis rotation up to the limit,
/// applied in the camera frame.
Pose perturb_pose(const Pose& pose, double translation_radius, double max_rotation_deg, std::uint64_t seed);

MatchPairSet generate_gt_pairs(const FieldParams& field, const Pose& database_pose, const Intrinsics& k,
                               const PairGenConfig& cfg, std::uint64_t seed);

/// Same as above with an explicit perturbed pose.
MatchPairSet generate_gt_pairs_at(const FieldParams& field, const Pose& database_pose, const Pose& perturbed,
                                  const Intrinsics& k, const PairGenConfig& cfg);

enum class CostMetric { kAbsolute, kSquared };
enum class CostNormalization { kNone, kDispersion };

std::string to_string(CostMetric m);
std::string to_string(CostNormalization n);
CostMetric cost_metric_from_string(const std::string& s);
CostNormalization cost_normalization_from_string(const std::string& s);

struct PerDimCost {
  Eigen::VectorXd c;
  int dim() const { return static_cast<int>(c.size()); }
};

PerDimCost accumulate_costs(const MatchPairSet& pairs, CostMetric metric = CostMetric::kAbsolute);
/// Sum of several pair sets; must share a dimension.
PerDimCost accumulate_costs(const std::vector<MatchPairSet>& sets, CostMetric metric = CostMetric::kAbsolute);

/// Divides each c_d by the summed absolute deviation of dimension d over the
/// 3D side of the pairs, so constant dimensions do not win by default.
PerDimCost normalize_by_dispersion(const PerDimCost& cost, const std::vector<MatchPairSet>& sets);

/// Objective of a mask in the given mode, summed in index order.
double selection_objective(const PerDimCost& cost, const SelectionMask& mask);

/// Exact solver by sorting; ties go to the lower dimension index.
SelectionMask solve_selection(const PerDimCost& cost, int budget, SelectionMode mode);

/// Exhaustive enumeration (D <= 20), same objective and tie-break.
SelectionMask brute_force_selection(const PerDimCost& cost, int budget, SelectionMode mode);

}  // namespace radloc
