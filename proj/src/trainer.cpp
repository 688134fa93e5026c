#include "radloc/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "radloc/adam.hpp"
#include "radloc/errors.hpp"
#include "radloc/renderer.hpp"

namespace radloc {

void TrainConfig::validate() const {
  require(steps >= 0 && batch_rays >= 1 && samples_per_ray >= 2, ErrorCode::kInvalidArgument,
          "invalid training schedule");
  require(lr_start >= 0.0 && lr_end >= 0.0, ErrorCode::kInvalidArgument, "learning rates must be >= 0");
  require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && eps > 0.0, ErrorCode::kInvalidArgument,
          "invalid Adam constants");
}

ColorLoss color_loss(const FieldParams& params, std::span<const Ray> rays, const SampleBatch& samples,
                     const Eigen::Matrix3Xd& targets, const Eigen::Matrix3Xd* background) {
  const int n_rays = samples.ray_count();
  require(n_rays == static_cast<int>(rays.size()) && targets.cols() == n_rays && n_rays > 0 &&
              (!background || background->cols() == n_rays),
          ErrorCode::kInvalidArgument, "ray, sample and target counts differ");
  Eigen::Matrix3Xd dirs(3, samples.size());
  for (int s = 0; s < samples.size(); ++s) dirs.col(s) = rays[samples.ray_index[s]].direction;
  const FieldTape tape = forward_tape(params, samples.positions, dirs);

  Eigen::RowVectorXd g_sigma(samples.size());
  Eigen::Matrix3Xd g_color(3, samples.size());
  const double norm = 1.0 / (3.0 * n_rays);
  ColorLoss out;
  std::vector<double> sigma, delta, gs;
  for (int r = 0; r < n_rays; ++r) {
    const auto [b, e] = samples.ray_range(r);
    const int n = e - b;
    sigma.assign(tape.sigma.data() + b, tape.sigma.data() + e);
    delta.resize(n);
    gs.resize(n);
    for (int k = 0; k < n; ++k) delta[k] = samples.t_end[b + k] - samples.t_start[b + k];
    const Quadrature q = quadrature(sigma, delta);
    Vec3 c = Vec3::Zero();
    for (int k = 0; k < n; ++k) c += q.weights[k] * tape.color.col(b + k);
    if (background) c += q.transmittance[n] * background->col(r);
    const Vec3 diff = c - targets.col(r);
    out.loss += norm * diff.squaredNorm();
    const Vec3 g_c = 2.0 * norm * diff;
    const Eigen::Matrix3Xd colors = tape.color.middleCols(b, n);
    quadrature_backward(q, delta, colors, g_c, gs);
    // dT_(n+1)/dsigma_k = -delta_k T_(n+1)
    const double bg = background ? q.transmittance[n] * background->col(r).dot(g_c) : 0.0;
    for (int k = 0; k < n; ++k) {
      g_sigma[b + k] = gs[k] - delta[k] * bg;
      g_color.col(b + k) = q.weights[k] * g_c;
    }
  }
  out.grad = backward(params, tape, g_sigma, g_color);
  return out;
}

TrainResult train(const FieldParams& init, std::span<const PosedImage> images, const TrainConfig& cfg) {
  cfg.validate();
  require(!images.empty(), ErrorCode::kInvalidArgument, "no training images");
  TrainResult result{init, {}};
  result.loss_log.reserve(static_cast<std::size_t>(cfg.steps));
  Adam adam(init.theta.size(), {cfg.beta1, cfg.beta2, cfg.eps});

  std::vector<long> offsets{0};
  for (const auto& img : images) offsets.push_back(offsets.back() + static_cast<long>(img.image.width) * img.image.height);
  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<long> pick(0, offsets.back() - 1);

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Ray> rays;
  std::vector<Vec3> targets, backgrounds;
  for (int step = 0; step < cfg.steps; ++step) {
    rays.clear();
    targets.clear();
    backgrounds.clear();
    for (int i = 0; i < cfg.batch_rays; ++i) {
      const long flat = pick(rng);
      const auto it = std::upper_bound(offsets.begin(), offsets.end(), flat) - 1;
      const auto& img = images[static_cast<std::size_t>(it - offsets.begin())];
      const long local = flat - *it;
      const PixelIndex px{static_cast<int>(local / img.image.width), static_cast<int>(local % img.image.width)};
      const auto ray = generate_rays(img.pose, img.intrinsics, std::span<const PixelIndex>(&px, 1)).front();
      const Vec3 bg(unit(rng), unit(rng), unit(rng));
      if (auto c = clip_to_box(ray, init.bounds)) {
        rays.push_back(*c);
        const bool vacuum = cfg.random_background && !img.depth.empty() &&
                            !std::isfinite(img.depth[static_cast<std::size_t>(local)]);
        targets.push_back(vacuum ? bg : img.image.rgb(px.row, px.col));
        backgrounds.push_back(bg);
      }
    }
    if (rays.empty()) {
      result.loss_log.push_back(0.0);
      continue;
    }
    const SampleBatch batch = stratified_samples(rays, cfg.samples_per_ray, rng());
    Eigen::Matrix3Xd tgt(3, static_cast<Eigen::Index>(targets.size()));
    Eigen::Matrix3Xd bgs(3, static_cast<Eigen::Index>(targets.size()));
    for (std::size_t i = 0; i < targets.size(); ++i) {
      tgt.col(static_cast<Eigen::Index>(i)) = targets[i];
      bgs.col(static_cast<Eigen::Index>(i)) = backgrounds[i];
    }
    const ColorLoss l = color_loss(result.params, rays, batch, tgt, cfg.random_background ? &bgs : nullptr);
    if (!std::isfinite(l.loss) || !l.grad.allFinite())
      fail(ErrorCode::kDivergence, "training diverged at step " + std::to_string(step));
    result.loss_log.push_back(l.loss);
    adam.step(result.params.theta, l.grad, exponential_lr(cfg.lr_start, cfg.lr_end, step, cfg.steps));
  }
  return result;
}

RgbImage render_image(const FieldParams& params, const Pose& pose, const Intrinsics& k, int samples_per_ray) {
  RenderOptions opt;
  opt.samples_per_ray = samples_per_ray;
  opt.features = false;
  const RenderedMap m = render_map(params, pose, k, opt);
  RgbImage img(k.width, k.height);
  for (int i = 0; i < m.size(); ++i) {
    const PixelIndex p = m.pixel(i);
    for (int c = 0; c < 3; ++c) img.pixel(p.row, p.col)[c] = m.color(c, i);
  }
  return img;
}

}  // namespace radloc
