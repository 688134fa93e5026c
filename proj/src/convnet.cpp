#include "radloc/convnet.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "radloc/errors.hpp"

namespace radloc {

ConvNet::ConvNet(std::vector<ConvSpec> layers) : layers_(std::move(layers)) {
  require(!layers_.empty(), ErrorCode::kInvalidArgument, "network has no layers");
  int off = 0;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    require(l.in_channels > 0 && l.out_channels > 0 && l.stride >= 1, ErrorCode::kInvalidArgument,
            "invalid convolution layer");
    if (i > 0)
      require(l.in_channels == layers_[i - 1].out_channels, ErrorCode::kInvalidArgument, "channel mismatch");
    Offsets o;
    o.weight = off;
    off += l.out_channels * l.in_channels * 9;
    o.bias = off;
    off += l.out_channels;
    offsets_.push_back(o);
  }
  total_ = off;
}

Eigen::VectorXd ConvNet::init(std::uint64_t seed) const {
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(total_);
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    const int fan_in = l.in_channels * 9;
    std::uniform_real_distribution<double> u(-std::sqrt(6.0 / fan_in), std::sqrt(6.0 / fan_in));
    for (int k = 0; k < l.out_channels * fan_in; ++k) theta[offsets_[i].weight + k] = u(rng);
  }
  return theta;
}

Activation ConvNet::forward(const Eigen::VectorXd& theta, const Activation& input, Tape* tape) const {
  require(theta.size() == total_, ErrorCode::kInvalidArgument, "parameter count mismatch");
  require(input.data.rows() == layers_.front().in_channels, ErrorCode::kInvalidArgument, "input channel mismatch");
  Activation x = input;
  if (tape) {
    tape->inputs.clear();
    tape->columns.clear();
  }
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    Eigen::MatrixXd cols = im2col(x, l.stride);
    const Eigen::Map<const Eigen::MatrixXd> w(theta.data() + offsets_[i].weight, l.out_channels, l.in_channels * 9);
    const Eigen::Map<const Eigen::VectorXd> b(theta.data() + offsets_[i].bias, l.out_channels);
    Activation y;
    y.rows = conv_out(x.rows, l.stride);
    y.cols = conv_out(x.cols, l.stride);
    y.data.noalias() = w * cols;
    y.data.colwise() += b;
    if (l.relu) y.data = y.data.cwiseMax(0.0);
    if (tape) {
      tape->inputs.push_back(std::move(x));
      tape->columns.push_back(std::move(cols));
    }
    x = std::move(y);
  }
  if (tape) tape->output = x;
  return x;
}

void ConvNet::backward(const Eigen::VectorXd& theta, const Tape& tape, const Eigen::MatrixXd& grad_output,
                       Eigen::VectorXd& grad) const {
  require(grad.size() == total_, ErrorCode::kInvalidArgument, "gradient size mismatch");
  Eigen::MatrixXd g = grad_output;
  for (int i = static_cast<int>(layers_.size()) - 1; i >= 0; --i) {
    const auto& l = layers_[static_cast<std::size_t>(i)];
    const Activation& out = i + 1 < static_cast<int>(layers_.size()) ? tape.inputs[static_cast<std::size_t>(i) + 1] : tape.output;
    if (l.relu) g = g.cwiseProduct((out.data.array() > 0.0).cast<double>().matrix());
    const auto& cols = tape.columns[static_cast<std::size_t>(i)];
    Eigen::Map<Eigen::MatrixXd> gw(grad.data() + offsets_[static_cast<std::size_t>(i)].weight, l.out_channels, l.in_channels * 9);
    Eigen::Map<Eigen::VectorXd> gb(grad.data() + offsets_[static_cast<std::size_t>(i)].bias, l.out_channels);
    gw.noalias() += g * cols.transpose();
    gb += g.rowwise().sum();
    if (i == 0) break;
    const Eigen::Map<const Eigen::MatrixXd> w(theta.data() + offsets_[static_cast<std::size_t>(i)].weight, l.out_channels,
                                              l.in_channels * 9);
    const Activation& in = tape.inputs[static_cast<std::size_t>(i)];
    const Eigen::MatrixXd gcols = w.transpose() * g;
    g = col2im(gcols, l.in_channels, in.rows, in.cols, l.stride).data;
  }
}

Activation image_activation(const RgbImage& img) {
  Activation a;
  a.rows = img.height;
  a.cols = img.width;
  a.data.resize(3, static_cast<Eigen::Index>(img.width) * img.height);
  for (int p = 0; p < img.width * img.height; ++p)
    for (int c = 0; c < 3; ++c) a.data(c, p) = img.data[static_cast<std::size_t>(p) * 3 + c] - 0.5;
  return a;
}

Eigen::MatrixXd im2col(const Activation& in, int stride) {
  const int ch = static_cast<int>(in.data.rows());
  const int orows = conv_out(in.rows, stride), ocols = conv_out(in.cols, stride);
  Eigen::MatrixXd cols = Eigen::MatrixXd::Zero(ch * 9, static_cast<Eigen::Index>(orows) * ocols);
  for (int r = 0; r < orows; ++r)
    for (int c = 0; c < ocols; ++c) {
      const int o = r * ocols + c;
      for (int ky = 0; ky < 3; ++ky) {
        const int y = r * stride + ky - 1;
        if (y < 0 || y >= in.rows) continue;
        for (int kx = 0; kx < 3; ++kx) {
          const int x = c * stride + kx - 1;
          if (x < 0 || x >= in.cols) continue;
          const int src = y * in.cols + x;
          for (int k = 0; k < ch; ++k) cols(k * 9 + ky * 3 + kx, o) = in.data(k, src);
        }
      }
    }
  return cols;
}

Activation col2im(const Eigen::MatrixXd& cols, int channels, int rows, int cols_, int stride) {
  Activation a;
  a.rows = rows;
  a.cols = cols_;
  a.data = Eigen::MatrixXd::Zero(channels, static_cast<Eigen::Index>(rows) * cols_);
  const int orows = conv_out(rows, stride), ocols = conv_out(cols_, stride);
  for (int r = 0; r < orows; ++r)
    for (int c = 0; c < ocols; ++c) {
      const int o = r * ocols + c;
      for (int ky = 0; ky < 3; ++ky) {
        const int y = r * stride + ky - 1;
        if (y < 0 || y >= rows) continue;
        for (int kx = 0; kx < 3; ++kx) {
          const int x = c * stride + kx - 1;
          if (x < 0 || x >= cols_) continue;
          const int dst = y * cols_ + x;
          for (int k = 0; k < channels; ++k) a.data(k, dst) += cols(k * 9 + ky * 3 + kx, o);
        }
      }
    }
  return a;
}

Resampler::Resampler(int in_rows, int in_cols, int out_rows, int out_cols)
    : in_rows_(in_rows), in_cols_(in_cols), out_rows_(out_rows), out_cols_(out_cols) {
  require(in_rows > 0 && in_cols > 0 && out_rows > 0 && out_cols > 0, ErrorCode::kInvalidArgument,
          "resampler sizes must be positive");
  auto axis = [](int out, int in, int i, int& i0, int& i1, double& f) {
    const double s = (i + 0.5) * in / out - 0.5;
    const double c = std::clamp(s, 0.0, static_cast<double>(in - 1));
    i0 = static_cast<int>(std::floor(c));
    i1 = std::min(i0 + 1, in - 1);
    f = c - i0;
  };
  taps_.resize(static_cast<std::size_t>(out_rows) * out_cols);
  for (int r = 0; r < out_rows; ++r)
    for (int c = 0; c < out_cols; ++c) {
      int r0, r1, c0, c1;
      double fr, fc;
      axis(out_rows, in_rows, r, r0, r1, fr);
      axis(out_cols, in_cols, c, c0, c1, fc);
      Tap& t = taps_[static_cast<std::size_t>(r) * out_cols + c];
      t.src[0] = r0 * in_cols + c0;
      t.src[1] = r0 * in_cols + c1;
      t.src[2] = r1 * in_cols + c0;
      t.src[3] = r1 * in_cols + c1;
      t.w[0] = (1 - fr) * (1 - fc);
      t.w[1] = (1 - fr) * fc;
      t.w[2] = fr * (1 - fc);
      t.w[3] = fr * fc;
    }
}

Eigen::MatrixXd Resampler::forward(const Eigen::MatrixXd& in) const {
  require(in.cols() == in_size(), ErrorCode::kInvalidArgument, "resampler input size mismatch");
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(in.rows(), out_size());
  for (int o = 0; o < out_size(); ++o)
    for (int k = 0; k < 4; ++k) out.col(o) += taps_[static_cast<std::size_t>(o)].w[k] * in.col(taps_[static_cast<std::size_t>(o)].src[k]);
  return out;
}

Eigen::MatrixXd Resampler::backward(const Eigen::MatrixXd& grad_out) const {
  require(grad_out.cols() == out_size(), ErrorCode::kInvalidArgument, "resampler gradient size mismatch");
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(grad_out.rows(), in_size());
  for (int o = 0; o < out_size(); ++o)
    for (int k = 0; k < 4; ++k) g.col(taps_[static_cast<std::size_t>(o)].src[k]) += taps_[static_cast<std::size_t>(o)].w[k] * grad_out.col(o);
  return g;
}

}  // namespace radloc
