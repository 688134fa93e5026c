#pragma once

// Minibatch training of a radiance field on posed RGB images.

#include <Eigen/Core>
#include <cstdint>
#include <span>
#include <vector>

#include "radloc/field.hpp"
#include "radloc/geometry.hpp"
#include "radloc/synthscene.hpp"

namespace radloc {

struct TrainConfig {
  int steps = 2000;
  int batch_rays = 512;
  int samples_per_ray = 32;
  double lr_start = 1e-2;
  double lr_end = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  // Composite each training ray over a random color, with vacuum pixels
  // (infinite depth) taking that color as target. Without it a black
  // background lets translucent surfaces with brightened colors fit as well
  // as opaque ones.
  bool random_background = true;

  void validate() const;
};

struct TrainResult {
  FieldParams params;
  std::vector<double> loss_log;
};

struct ColorLoss {
  double loss = 0.0;
  Eigen::VectorXd grad;  // dL/dtheta
};

/// Mean squared color error over the rays of `samples` against `targets`
/// (one RGB column per ray), with its exact parameter gradient. With a
/// `background`, ray r renders as C + T_(n+1) background.col(r).
ColorLoss color_loss(const FieldParams& params, std::span<const Ray> rays, const SampleBatch& samples,
                     const Eigen::Matrix3Xd& targets, const Eigen::Matrix3Xd* background = nullptr);

/// Adam with exponential learning-rate decay. Rays are drawn uniformly over
/// all pixels of all images and clipped to the field bounds. A non-finite
/// loss raises kDivergence naming the step.
TrainResult train(const FieldParams& init, std::span<const PosedImage> images, const TrainConfig& cfg);

/// Full-resolution color render, stored as an image.
RgbImage render_image(const FieldParams& params, const Pose& pose, const Intrinsics& k, int samples_per_ray = 32);

}  // namespace radloc
