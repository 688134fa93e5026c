#pragma once

// Coarse localization: training poses are grouped by position and then by
// viewing direction, and a small classifier trained with an additive angular
// margin loss maps a query image to a group whose representative pose seeds
// the fine stage.

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "radloc/convnet.hpp"
#include "radloc/geometry.hpp"
#include "radloc/synthscene.hpp"

namespace radloc {

struct PoseGroup {
  int id = 0;
  std::vector<int> members;
  Vec3 centroid = Vec3::Zero();
  Vec3 mean_direction = -Vec3::UnitZ();
  int representative_id = -1;
  Pose representative;

  bool operator==(const PoseGroup& o) const;
};

/// Angle between two unit vectors, radians.
double angular_distance(const Vec3& a, const Vec3& b);

/// ||t - centroid|| + angle(view, mean_direction).
double combined_distance(const Pose& pose, const Vec3& centroid, const Vec3& mean_direction);

struct ClusterTrace {
  /// Largest deviation from unit norm of any orientation center after any
  /// update.
  double max_center_norm_error = 0.0;
};

/// Euclidean k-means on translations, then angular k-means on viewing
/// directions inside each spatial cluster. Both stages use farthest-point
/// seeding from a seeded first pick; empty clusters are dropped, so
/// duplicate poses collapse into one group.
std::vector<PoseGroup> two_stage_cluster(const std::vector<Pose>& poses, int k_spatial, int k_orient,
                                         std::uint64_t seed, ClusterTrace* trace = nullptr);

Pose initial_pose(const PoseGroup& group);

struct ArcFaceResult {
  double loss = 0.0;
  Eigen::VectorXd grad_feature;
  Eigen::MatrixXd grad_embeddings;  // same shape as the embeddings
};

/// -log(e^{s cos(t_y + m)} / (e^{s cos(t_y + m)} + sum_{j != y} e^{s cos t_j})),
/// cos t_j = <feature, embedding_j>. Rows of `embeddings` are classes.
ArcFaceResult arcface_loss(const Eigen::MatrixXd& embeddings, const Eigen::VectorXd& feature, int label, double margin,
                           double scale);

struct PlaceConfig {
  int embedding_dim = 64;
  double margin = 0.2;
  double scale = 16.0;
  int epochs = 40;
  int batch_images = 8;
  double lr_start = 3e-3;
  double lr_end = 3e-4;
  std::uint64_t seed = 0;

  void validate() const;
};

struct PlacePredictor {
  ConvNet backbone;
  Eigen::VectorXd theta;       // backbone parameters
  Eigen::MatrixXd head_w;      // embedding_dim x backbone channels
  Eigen::VectorXd head_b;
  Eigen::MatrixXd embeddings;  // classes x embedding_dim, unit rows
  double margin = 0.2;
  double scale = 16.0;
  int image_width = 0;
  int image_height = 0;
  bool trained = false;

  int classes() const { return static_cast<int>(embeddings.rows()); }
};

PlacePredictor make_place_predictor(int classes, int width, int height, const PlaceConfig& cfg);

/// Unit-norm image embedding.
Eigen::VectorXd place_embedding(const PlacePredictor& p, const RgbImage& image);

struct PlaceTrainResult {
  PlacePredictor predictor;
  std::vector<double> loss_log;  // per epoch
};

PlaceTrainResult train_place_predictor(std::span<const RgbImage> images, std::span<const int> labels, int classes,
                                       const PlaceConfig& cfg);

struct PlacePrediction {
  int group = 0;
  double confidence = 0.0;
  Eigen::VectorXd probabilities;
};

/// Softmax over s * cos logits without margin.
PlacePrediction predict_place(const PlacePredictor& p, const RgbImage& image);

/// JSON: version, then groups with members, centroid, mean direction and the
/// representative pose as 12 numbers (row-major R, then t).
std::string encode_pose_groups(const std::vector<PoseGroup>& groups);
std::vector<PoseGroup> decode_pose_groups(const std::string& text);
void save_pose_groups(const std::filesystem::path& path, const std::vector<PoseGroup>& groups);
std::vector<PoseGroup> load_pose_groups(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_place_predictor(const PlacePredictor& p);
PlacePredictor decode_place_predictor(std::span<const std::uint8_t> bytes);

}  // namespace radloc
