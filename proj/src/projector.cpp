#include "radloc/projector.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "radloc/adam.hpp"
#include "radloc/binary_io.hpp"
#include "radloc/errors.hpp"
#include "radloc/renderer.hpp"

namespace radloc {

namespace {

ConvNet projector_net(int feature_dim) {
  return ConvNet({{3, 16, 1, true}, {16, 32, 2, true}, {32, feature_dim, 1, false}});
}

Resampler output_resampler(const ProjectorParams& p) {
  const int fr = conv_out(conv_out(p.image_height, 1), 2);
  const int fc = conv_out(conv_out(p.image_width, 1), 2);
  const int gr = (p.image_height + p.stride - 1) / p.stride;
  const int gc = (p.image_width + p.stride - 1) / p.stride;
  return Resampler(fr, fc, gr, gc);
}

// Normalized prediction on the render grid.
Eigen::MatrixXd predict(const ProjectorParams& p, const Resampler& rs, const RgbImage& image, ConvNet::Tape* tape) {
  require(image.width == p.image_width && image.height == p.image_height, ErrorCode::kInvalidArgument,
          "image size does not match the projector");
  const Activation out = p.net.forward(p.theta, image_activation(image), tape);
  return rs.forward(out.data);
}

Eigen::MatrixXd normalize_target(const ProjectorParams& p, const Eigen::MatrixXd& target) {
  return (target.colwise() - p.mean).array().colwise() / p.scale.array();
}

}  // namespace

void ProjectorConfig::validate() const {
  require(epochs >= 0 && batch_images >= 1 && stride >= 1 && samples_per_ray >= 2, ErrorCode::kInvalidArgument,
          "invalid projector schedule");
  require(val_fraction >= 0.0 && val_fraction < 1.0, ErrorCode::kInvalidArgument, "val_fraction must be in [0, 1)");
}

ProjectorParams make_projector(int feature_dim, int width, int height, int stride, std::uint64_t seed) {
  ProjectorParams p;
  p.net = projector_net(feature_dim);
  p.theta = p.net.init(seed);
  p.mean = Eigen::VectorXd::Zero(feature_dim);
  p.scale = Eigen::VectorXd::Ones(feature_dim);
  p.image_width = width;
  p.image_height = height;
  p.stride = stride;
  return p;
}

double projector_loss(const ProjectorParams& p, const RgbImage& image, const Eigen::MatrixXd& target) {
  const Eigen::MatrixXd diff = predict(p, output_resampler(p), image, nullptr) - normalize_target(p, target);
  return diff.squaredNorm() / static_cast<double>(diff.size());
}

ProjectorTrainResult train_projector(const FieldParams& field, std::span<const PosedImage> images,
                                     const ProjectorConfig& cfg) {
  cfg.validate();
  require(!images.empty(), ErrorCode::kInvalidArgument, "no projector training images");
  const int d = field.config.feature_dim();
  const auto& k0 = images.front().intrinsics;
  ProjectorTrainResult res;
  ProjectorParams& p = res.params;
  p = make_projector(d, k0.width, k0.height, cfg.stride, cfg.seed);

  RenderOptions opt;
  opt.stride = cfg.stride;
  opt.samples_per_ray = cfg.samples_per_ray;
  opt.color = false;
  std::vector<Eigen::MatrixXd> targets;
  for (const auto& img : images) targets.push_back(render_map(field, img.pose, img.intrinsics, opt).features);

  const int n = static_cast<int>(images.size());
  const int n_val = std::min(n - 1, static_cast<int>(cfg.val_fraction * n));
  const int n_train = n - n_val;
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(d), sq = Eigen::VectorXd::Zero(d);
  long count = 0;
  for (int i = 0; i < n_train; ++i) {
    sum += targets[static_cast<std::size_t>(i)].rowwise().sum();
    sq += targets[static_cast<std::size_t>(i)].rowwise().squaredNorm();
    count += targets[static_cast<std::size_t>(i)].cols();
  }
  p.mean = sum / static_cast<double>(count);
  p.scale = (sq / static_cast<double>(count) - p.mean.cwiseAbs2()).cwiseMax(0.0).cwiseSqrt().cwiseMax(1e-6);
  std::vector<Eigen::MatrixXd> norm;
  for (const auto& t : targets) norm.push_back(normalize_target(p, t));

  const Resampler rs = output_resampler(p);
  Adam adam(p.theta.size());
  std::mt19937_64 rng(cfg.seed);
  std::vector<int> order(static_cast<std::size_t>(n_train));
  std::iota(order.begin(), order.end(), 0);
  const int batches = (n_train + cfg.batch_images - 1) / cfg.batch_images;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (int b = 0; b < batches; ++b) {
      const int lo = b * cfg.batch_images, hi = std::min(n_train, lo + cfg.batch_images);
      Eigen::VectorXd grad = Eigen::VectorXd::Zero(p.theta.size());
      for (int s = lo; s < hi; ++s) {
        const int i = order[static_cast<std::size_t>(s)];
        ConvNet::Tape tape;
        const Eigen::MatrixXd diff = predict(p, rs, images[static_cast<std::size_t>(i)].image, &tape) - norm[static_cast<std::size_t>(i)];
        const double scale = 1.0 / (static_cast<double>(diff.size()) * (hi - lo));
        epoch_loss += diff.squaredNorm() / static_cast<double>(diff.size());
        p.net.backward(p.theta, tape, rs.backward(2.0 * scale * diff), grad);
      }
      const int step = epoch * batches + b;
      adam.step(p.theta, grad, exponential_lr(cfg.lr_start, cfg.lr_end, step, cfg.epochs * batches));
    }
    res.train_loss.push_back(epoch_loss / n_train);
  }
  double val = 0.0;
  const int first_val = n_val > 0 ? n_train : 0;
  for (int i = first_val; i < n; ++i) {
    const Eigen::MatrixXd diff = predict(p, rs, images[static_cast<std::size_t>(i)].image, nullptr) - norm[static_cast<std::size_t>(i)];
    val += diff.squaredNorm() / static_cast<double>(diff.size());
  }
  p.val_loss = val / (n - first_val);
  p.trained = true;
  return res;
}

QueryFeatureMap extract_query_features(const RgbImage& image, const ProjectorParams& projector,
                                       const std::optional<SelectionMask>& selection, int image_id) {
  require(projector.trained, ErrorCode::kUntrained, "projector has not been trained");
  if (selection)
    require(selection->dim() == projector.feature_dim(), ErrorCode::kInvalidArgument,
            "selection dimension does not match the projector");
  const Eigen::MatrixXd z = predict(projector, output_resampler(projector), image, nullptr);
  const Eigen::MatrixXd f = (z.array().colwise() * projector.scale.array()).colwise() + projector.mean.array();
  QueryFeatureMap q;
  q.stride = projector.stride;
  q.grid_width = (projector.image_width + projector.stride - 1) / projector.stride;
  q.grid_height = (projector.image_height + projector.stride - 1) / projector.stride;
  q.image_id = image_id;
  q.feature_dims = selection ? selection->indices() : std::vector<int>();
  if (!selection) {
    q.feature_dims.resize(static_cast<std::size_t>(projector.feature_dim()));
    std::iota(q.feature_dims.begin(), q.feature_dims.end(), 0);
  }
  q.features.resize(static_cast<Eigen::Index>(q.feature_dims.size()), f.cols());
  for (std::size_t r = 0; r < q.feature_dims.size(); ++r) q.features.row(static_cast<Eigen::Index>(r)) = f.row(q.feature_dims[r]);
  return q;
}

std::vector<std::uint8_t> encode_projector(const ProjectorParams& p) {
  std::vector<std::uint8_t> out;
  io::put_bytes(out, "MLPJ");
  io::put<std::uint32_t>(out, 1);
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(p.feature_dim()));
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(p.image_width));
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(p.image_height));
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(p.stride));
  io::put<std::uint8_t>(out, p.trained ? 1 : 0);
  io::put<double>(out, p.val_loss);
  for (Eigen::Index i = 0; i < p.mean.size(); ++i) io::put<double>(out, p.mean[i]);
  for (Eigen::Index i = 0; i < p.scale.size(); ++i) io::put<double>(out, p.scale[i]);
  io::put<std::uint64_t>(out, static_cast<std::uint64_t>(p.theta.size()));
  for (Eigen::Index i = 0; i < p.theta.size(); ++i) io::put<double>(out, p.theta[i]);
  return out;
}

ProjectorParams decode_projector(std::span<const std::uint8_t> bytes) {
  io::Reader rd(bytes);
  require(rd.get_string(4) == "MLPJ" && rd.get<std::uint32_t>() == 1, ErrorCode::kCorruptCheckpoint,
          "not a projector file");
  const int d = static_cast<int>(rd.get<std::uint32_t>());
  const int w = static_cast<int>(rd.get<std::uint32_t>());
  const int h = static_cast<int>(rd.get<std::uint32_t>());
  const int stride = static_cast<int>(rd.get<std::uint32_t>());
  ProjectorParams p = make_projector(d, w, h, stride, 0);
  p.trained = rd.get<std::uint8_t>() != 0;
  p.val_loss = rd.get<double>();
  for (Eigen::Index i = 0; i < d; ++i) p.mean[i] = rd.get<double>();
  for (Eigen::Index i = 0; i < d; ++i) p.scale[i] = rd.get<double>();
  require(rd.get<std::uint64_t>() == static_cast<std::uint64_t>(p.theta.size()), ErrorCode::kCorruptCheckpoint,
          "projector parameter count mismatch");
  for (Eigen::Index i = 0; i < p.theta.size(); ++i) p.theta[i] = rd.get<double>();
  require(rd.done(), ErrorCode::kCorruptCheckpoint, "trailing bytes in projector file");
  return p;
}

void save_projector(const std::filesystem::path& path, const ProjectorParams& p) {
  io::write_file(path, encode_projector(p));
}

ProjectorParams load_projector(const std::filesystem::path& path) { return decode_projector(io::read_file(path)); }

}  // namespace radloc
