#pragma once

// Small sequential convolutional networks over single images.
// Activations are stored as channels x (rows * cols), pixels row-major.

#include <Eigen/Core>
#include <cstdint>
#include <vector>

#include "radloc/synthscene.hpp"

namespace radloc {

struct ConvSpec {
  int in_channels = 0;
  int out_channels = 0;
  int stride = 1;
  bool relu = true;
};

struct Activation {
  Eigen::MatrixXd data;
  int rows = 0;
  int cols = 0;
};

/// 3x3 kernels, zero padding 1.
class ConvNet {
 public:
  ConvNet() = default;
  explicit ConvNet(std::vector<ConvSpec> layers);

  int parameter_count() const { return total_; }
  const std::vector<ConvSpec>& layers() const { return layers_; }
  int out_channels() const { return layers_.back().out_channels; }

  /// He-uniform weights, zero biases.
  Eigen::VectorXd init(std::uint64_t seed) const;

  struct Tape {
    std::vector<Activation> inputs;  // input of every layer
    std::vector<Eigen::MatrixXd> columns;
    Activation output;
  };

  Activation forward(const Eigen::VectorXd& theta, const Activation& input, Tape* tape = nullptr) const;
  /// Accumulates dL/dtheta into `grad`.
  void backward(const Eigen::VectorXd& theta, const Tape& tape, const Eigen::MatrixXd& grad_output,
                Eigen::VectorXd& grad) const;

 private:
  struct Offsets {
    int weight = 0;
    int bias = 0;
  };
  std::vector<ConvSpec> layers_;
  std::vector<Offsets> offsets_;
  int total_ = 0;
};

/// RGB image to a 3-channel activation centered on zero.
Activation image_activation(const RgbImage& img);

/// Output size of a 3x3, pad-1 convolution.
inline int conv_out(int n, int stride) { return (n - 1) / stride + 1; }

Eigen::MatrixXd im2col(const Activation& in, int stride);
Activation col2im(const Eigen::MatrixXd& cols, int channels, int rows, int cols_, int stride);

/// Bilinear resampling with half-pixel centers, as a fixed sparse operator.
class Resampler {
 public:
  Resampler() = default;
  Resampler(int in_rows, int in_cols, int out_rows, int out_cols);

  Eigen::MatrixXd forward(const Eigen::MatrixXd& in) const;
  Eigen::MatrixXd backward(const Eigen::MatrixXd& grad_out) const;
  int out_size() const { return out_rows_ * out_cols_; }
  int in_size() const { return in_rows_ * in_cols_; }

 private:
  struct Tap {
    int src[4];
    double w[4];
  };
  int in_rows_ = 0, in_cols_ = 0, out_rows_ = 0, out_cols_ = 0;
  std::vector<Tap> taps_;
};

}  // namespace radloc
