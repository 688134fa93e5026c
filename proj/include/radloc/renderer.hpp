#pragma once

// Volumetric quadrature of color, intermediate features and depth.
//
//   w_k = T_k (1 - exp(-sigma_k dt_k)),  T_k = exp(-sum_{k'<k} sigma_k' dt_k')
//   C = sum w_k c_k,  F = sum w_k f_k,  U = sum w_k u_k,  acc = sum w_k
//
// u_k is the ray distance of the k-th sample; U is not renormalized by acc.

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "radloc/field.hpp"
#include "radloc/geometry.hpp"
#include "radloc/selection.hpp"

namespace radloc {

/// Weights and transmittance of one ray. `transmittance` has n + 1 entries,
/// the last one being the transmittance past the final interval.
struct Quadrature {
  std::vector<double> weights;
  std::vector<double> transmittance;
};

Quadrature quadrature(std::span<const double> sigma, std::span<const double> delta);

/// dL/dsigma_k for L depending on C = sum w_k c_k, given g = dL/dC and the
/// per-sample colors. Written into `grad_sigma`.
void quadrature_backward(const Quadrature& q, std::span<const double> delta, const Eigen::Matrix3Xd& colors,
                         const Vec3& grad_c, std::span<double> grad_sigma);

struct RayRender {
  Vec3 color = Vec3::Zero();
  Eigen::VectorXd feature;
  double depth = 0.0;
  double acc = 0.0;
  std::vector<double> weights;
  std::vector<double> transmittance;
};

/// Samples of a single ray, contiguous and ordered by t.
struct SampleSlice {
  Eigen::Matrix3Xd positions;
  Eigen::VectorXd t_start;
  Eigen::VectorXd t_end;

  static SampleSlice from_batch(const SampleBatch& batch, int ray);
};

RayRender render_ray(const FieldParams& params, const Ray& ray, const SampleSlice& samples,
                     const std::optional<SelectionMask>& selection = std::nullopt, bool color = true);

struct RenderOptions {
  int stride = 1;
  int samples_per_ray = 32;
  std::optional<SelectionMask> selection;
  bool color = true;
  bool features = true;
  int chunk_rays = 64;
};

struct RenderedMap {
  int grid_width = 0;
  int grid_height = 0;
  int stride = 1;
  Pose pose;
  Intrinsics intrinsics;
  std::vector<int> feature_dims;
  Eigen::Matrix3Xd color;
  Eigen::MatrixXd features;  // feature_dims.size() x pixels
  Eigen::VectorXd depth;
  Eigen::VectorXd acc;

  int size() const { return grid_width * grid_height; }
  /// Full-resolution pixel rendered at grid index i.
  PixelIndex pixel(int i) const { return {(i / grid_width) * stride, (i % grid_width) * stride}; }
};

/// Every stride-th pixel, parallel over ray chunks. Output ordering and
/// values do not depend on the thread count.
RenderedMap render_map(const FieldParams& params, const Pose& pose, const Intrinsics& k,
                       const RenderOptions& options = {});
/// Single-threaded reference with the same chunking.
RenderedMap render_map_serial(const FieldParams& params, const Pose& pose, const Intrinsics& k,
                              const RenderOptions& options = {});

struct LiftedCloud {
  Eigen::Matrix3Xd points;
  Eigen::MatrixXd features;
  std::vector<int> grid_index;  // source pixel in the rendered grid

  int size() const { return static_cast<int>(points.cols()); }
};

/// Place each sufficiently opaque pixel's feature at o + U d.
LiftedCloud lift_to_3d(const RenderedMap& map, double opacity_threshold = 0.5);

/// Export: u32 width, height, D, stride; then per pixel float32 RGB, depth,
/// acc and D features.
std::vector<std::uint8_t> encode_rendered_map(const RenderedMap& map);
RenderedMap decode_rendered_map(std::span<const std::uint8_t> bytes);
void save_rendered_map(const std::filesystem::path& path, const RenderedMap& map);
RenderedMap load_rendered_map(const std::filesystem::path& path);

}  // namespace radloc
