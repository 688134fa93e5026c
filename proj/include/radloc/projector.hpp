#pragma once

// Learned query-feature projector: three 3x3 convolutions (3->16, 16->32
// stride 2, 32->D) followed by bilinear resampling to the render grid,
// regressing rendered feature maps from RGB under an L2 loss.

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "radloc/convnet.hpp"
#include "radloc/field.hpp"
#include "radloc/matcher.hpp"
#include "radloc/selection.hpp"
#include "radloc/synthscene.hpp"

namespace radloc {

struct ProjectorConfig {
  int epochs = 60;
  int batch_images = 4;
  double lr_start = 3e-3;
  double lr_end = 3e-4;
  int stride = 2;  // render grid stride the output is resampled to
  int samples_per_ray = 32;
  double val_fraction = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

struct ProjectorParams {
  ConvNet net;
  Eigen::VectorXd theta;
  Eigen::VectorXd mean;   // per feature dimension
  Eigen::VectorXd scale;  // per feature dimension
  int image_width = 0;
  int image_height = 0;
  int stride = 2;
  double val_loss = 0.0;  // normalized mean squared error on held-out images
  bool trained = false;

  int feature_dim() const { return static_cast<int>(mean.size()); }
};

struct ProjectorTrainResult {
  ProjectorParams params;
  std::vector<double> train_loss;  // per epoch
};

ProjectorParams make_projector(int feature_dim, int width, int height, int stride, std::uint64_t seed);

/// Targets are rendered from `field` at each image's pose; the last
/// val_fraction of the images is held out for the validation loss.
ProjectorTrainResult train_projector(const FieldParams& field, std::span<const PosedImage> images,
                                     const ProjectorConfig& cfg);

/// Normalized mean squared error of the projector on one posed image.
double projector_loss(const ProjectorParams& p, const RgbImage& image, const Eigen::MatrixXd& target);

QueryFeatureMap extract_query_features(const RgbImage& image, const ProjectorParams& projector,
                                       const std::optional<SelectionMask>& selection, int image_id = -1);

std::vector<std::uint8_t> encode_projector(const ProjectorParams& p);
ProjectorParams decode_projector(std::span<const std::uint8_t> bytes);
void save_projector(const std::filesystem::path& path, const ProjectorParams& p);
ProjectorParams load_projector(const std::filesystem::path& path);

}  // namespace radloc
