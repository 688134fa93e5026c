#pragma once

// Small radiance field: frequency encoding, ReLU trunk, a linear feature
// bottleneck feeding a view-dependent color head, and a softplus density head
// on the trunk output.
//
//   f_pos = encode(x)                          (pos_dim, 32 by default)
//   h     = trunk(f_pos)                       (trunk_width)
//   sigma = softplus(w_d . h + b_d)
//   f_mlp = W_b h + b_b                        (mlp_dim, 15 by default)
//   c     = sigmoid(W_2 relu(W_1 [f_mlp; encode(dir)] + b_1) + b_2)
//
// Intermediate feature vector f = [f_pos; f_mlp], 47 dims by default.

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "radloc/geometry.hpp"

namespace radloc {

struct FieldConfig {
  std::array<int, 3> pos_octaves{6, 6, 4};
  int dir_octaves = 4;
  int trunk_width = 64;
  int trunk_depth = 4;
  int mlp_dim = 15;
  int color_hidden = 32;

  int pos_dim() const { return 2 * (pos_octaves[0] + pos_octaves[1] + pos_octaves[2]); }
  int dir_dim() const { return 6 * dir_octaves; }
  int feature_dim() const { return pos_dim() + mlp_dim; }
  void validate() const;
};

/// Offsets of every weight block inside the flat parameter vector, in
/// declaration order: trunk layers, bottleneck, density head, color head.
struct FieldLayout {
  struct Block {
    int rows = 0;
    int cols = 0;
    int offset = 0;
    int size() const { return rows * cols; }
  };
  std::vector<Block> trunk_w, trunk_b;
  Block bottleneck_w, bottleneck_b;
  Block density_w, density_b;
  Block color1_w, color1_b;
  Block color2_w, color2_b;
  int total = 0;

  explicit FieldLayout(const FieldConfig& cfg);
};

struct FieldParams {
  FieldConfig config;
  Aabb bounds;
  Eigen::VectorXd theta;

  int size() const { return static_cast<int>(theta.size()); }
  bool all_finite() const { return theta.allFinite(); }
};

/// He/Xavier-uniform initialization, density bias zero.
FieldParams init_field(const FieldConfig& cfg, const Aabb& bounds, std::uint64_t seed);

/// [sin(2^0 pi x), cos(2^0 pi x), ..., sin(2^(L-1) pi x), cos(...)] for x, then
/// y, then z. Inputs are normalized coordinates; |x_i| > 1.5 is rejected.
Eigen::VectorXd positional_encode(const Vec3& x, int octaves);
Eigen::VectorXd positional_encode(const Vec3& x, const std::array<int, 3>& octaves);

struct PointEval {
  double sigma = 0.0;
  Vec3 color = Vec3::Zero();
  Eigen::VectorXd f_pos;
  Eigen::VectorXd f_mlp;
};

/// Single-point forward pass. `x` is in world coordinates.
PointEval eval_point(const FieldParams& params, const Vec3& x, const Vec3& view_dir);

struct BatchRequest {
  bool color = true;
  /// Feature dimensions to return, ascending; empty means none, use
  /// all_feature_dims() for the full vector.
  std::span<const int> feature_dims;
};

struct BatchOutput {
  Eigen::RowVectorXd sigma;
  Eigen::Matrix3Xd color;    // empty when not requested
  Eigen::MatrixXd features;  // rows follow BatchRequest::feature_dims
};

/// Forward pass over a column batch of world positions and unit directions.
BatchOutput eval_batch(const FieldParams& params, const Eigen::Matrix3Xd& positions,
                       const Eigen::Matrix3Xd& dirs, const BatchRequest& request);

std::vector<int> all_feature_dims(const FieldConfig& cfg);

/// Activations retained for the reverse pass.
struct FieldTape {
  Eigen::MatrixXd pos_enc;
  std::vector<Eigen::MatrixXd> trunk;  // post-ReLU activations
  Eigen::MatrixXd f_mlp;
  Eigen::RowVectorXd density_pre;
  Eigen::RowVectorXd sigma;
  Eigen::MatrixXd color_in;
  Eigen::MatrixXd color_hidden;  // post-ReLU
  Eigen::Matrix3Xd color;
};

FieldTape forward_tape(const FieldParams& params, const Eigen::Matrix3Xd& positions,
                       const Eigen::Matrix3Xd& dirs);

/// Gradient of a loss with respect to theta, given dL/dsigma and dL/dcolor
/// per sample.
Eigen::VectorXd backward(const FieldParams& params, const FieldTape& tape,
                         const Eigen::RowVectorXd& grad_sigma, const Eigen::Matrix3Xd& grad_color);

double softplus(double x);
double sigmoid(double x);

/// Checkpoint: "MLNF", u32 version, architecture header, scene bounds, then
/// the parameter vector as little-endian float64.
std::vector<std::uint8_t> encode_checkpoint(const FieldParams& params);
FieldParams decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const std::filesystem::path& path, const FieldParams& params);
FieldParams load_checkpoint(const std::filesystem::path& path);

}  // namespace radloc
