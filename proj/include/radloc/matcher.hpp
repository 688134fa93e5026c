#pragma once

// Dense 2D-3D correspondences by mutual nearest neighbours under negative
// Euclidean distance.

#include <Eigen/Core>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "radloc/field.hpp"
#include "radloc/geometry.hpp"
#include "radloc/renderer.hpp"
#include "radloc/selection.hpp"

namespace radloc {

struct QueryFeatureMap {
  int grid_width = 0;
  int grid_height = 0;
  int stride = 1;
  int image_id = -1;
  std::vector<int> feature_dims;
  Eigen::MatrixXd features;  // dims x pixels, row-major pixel order

  int size() const { return grid_width * grid_height; }
  int dim() const { return static_cast<int>(features.rows()); }
  PixelIndex pixel(int i) const { return {(i / grid_width) * stride, (i % grid_width) * stride}; }
};

/// Rendered at the image's true pose; a noise-free upper bound for the
/// learned projector.
QueryFeatureMap oracle_query_features(const FieldParams& field, const Pose& true_pose, const Intrinsics& k,
                                      int stride, const std::optional<SelectionMask>& selection,
                                      int samples_per_ray = 32, int image_id = -1);

struct MutualPair {
  int i = 0;  // column of the first set
  int j = 0;  // column of the second set
  double score = 0.0;  // -distance
};

/// Mutual nearest neighbours between the columns of `a` and `b`. Ties go to
/// the lower index. Parallel over tiles of `a`; result sorted by i.
std::vector<MutualPair> mutual_nn(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);
/// Plain double loop over the full similarity matrix.
std::vector<MutualPair> mutual_nn_reference(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

struct Correspondence {
  PixelIndex pixel;
  Vec3 point = Vec3::Zero();
  double score = 0.0;
  int query_index = 0;
  int cloud_index = 0;
};

struct Correspondences {
  std::vector<Correspondence> items;
  int size() const { return static_cast<int>(items.size()); }
};

Correspondences match(const QueryFeatureMap& query, const LiftedCloud& cloud);

/// CSV with header `row,col,x,y,z,score`, full double precision.
std::string correspondences_csv(const Correspondences& c);
void save_correspondences(const std::filesystem::path& path, const Correspondences& c);
Correspondences load_correspondences(const std::filesystem::path& path);

}  // namespace radloc
