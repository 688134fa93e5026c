#include <doctest.h>

#include <cmath>
#include <random>

#include "field_oracle.hpp"
#include "radloc/errors.hpp"
#include "radloc/field.hpp"
#include "radloc/report.hpp"
#include "radloc/trainer.hpp"
#include "support.hpp"

using namespace radloc;

namespace {

Aabb unit_box() {
  Aabb b;
  b.lo = Vec3(-2, -2, -1);
  b.hi = Vec3(2, 2, 1);
  return b;
}

Vec3 random_point(const Aabb& b, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  return b.lo + Vec3(u(rng), u(rng), u(rng)).cwiseProduct(b.size());
}

// Rays from outside the box through random interior points, clipped to it.
std::vector<Ray> box_rays(const Aabb& box, int n, std::mt19937_64& rng) {
  std::vector<Ray> rays;
  while (static_cast<int>(rays.size()) < n) {
    Ray r;
    r.origin = box.center() + Vec3(0.3, -0.2, 4.0);
    r.direction = (random_point(box, rng) - r.origin).normalized();
    r.t_far = 100.0;
    if (auto c = clip_to_box(r, box)) rays.push_back(*c);
  }
  return rays;
}

}  // namespace

TEST_CASE("positional encoding examples") {
  for (int l : {1, 3, 6}) {
    const Eigen::VectorXd e = positional_encode(Vec3::Zero(), l);
    REQUIRE(e.size() == 6 * l);
    for (int i = 0; i < e.size(); i += 2) {
      CHECK(e[i] == 0.0);
      CHECK(e[i + 1] == 1.0);
    }
  }
  const Eigen::VectorXd e = positional_encode(Vec3(0.5, 0, 0), 1);
  CHECK(e[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(positional_encode(Vec3(0.1, 0.2, 0.3), 5).size() == 30);
  CHECK(positional_encode(Vec3(0.1, 0.2, 0.3), std::array<int, 3>{6, 6, 4}).size() == 32);
  try {
    positional_encode(Vec3(1.6, 0, 0), 2);
    FAIL("expected a scene-bounds error");
  } catch (const Error& err) {
    CHECK(err.code() == ErrorCode::kSceneBounds);
  }
}

TEST_CASE("default feature split is 32 positional plus 15 trunk dims") {
  const FieldConfig cfg;
  CHECK(cfg.pos_dim() == 32);
  CHECK(cfg.mlp_dim == 15);
  CHECK(cfg.feature_dim() == 47);
  const FieldParams p = init_field(cfg, unit_box(), 1);
  const PointEval e = eval_point(p, Vec3(0.1, 0.2, 0.3), Vec3(0, 0, -1));
  CHECK(e.f_pos.size() == 32);
  CHECK(e.f_mlp.size() == 15);
}

TEST_CASE("zero density head gives softplus(0)") {
  FieldParams p = init_field(FieldConfig{}, unit_box(), 2);
  const FieldLayout lay(p.config);
  for (int i = 0; i < lay.density_w.size(); ++i) p.theta[lay.density_w.offset + i] = 0.0;
  p.theta[lay.density_b.offset] = 0.0;
  std::mt19937_64 rng(4);
  for (int i = 0; i < 20; ++i) {
    const PointEval e = eval_point(p, random_point(p.bounds, rng), test::random_unit(rng));
    CHECK(e.sigma == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  }
}

TEST_CASE("forward pass agrees with the long double oracle") {
  std::mt19937_64 rng(6);
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    FieldParams p = init_field(FieldConfig{}, unit_box(), seed);
    std::normal_distribution<double> n(0.0, 0.05);
    for (Eigen::Index i = 0; i < p.theta.size(); ++i) p.theta[i] += n(rng);
    const test::FieldOracle o(p);
    for (int i = 0; i < 30; ++i) {
      const Vec3 x = random_point(p.bounds, rng), d = test::random_unit(rng);
      const PointEval e = eval_point(p, x, d);
      const test::OracleSample s = o.eval(x, d);
      CHECK(e.sigma == doctest::Approx(static_cast<double>(s.sigma)).epsilon(1e-12));
      for (int c = 0; c < 3; ++c) CHECK(e.color[c] == doctest::Approx(static_cast<double>(s.color[c])).epsilon(1e-12));
      for (int k = 0; k < e.f_pos.size(); ++k) CHECK(std::abs(e.f_pos[k] - static_cast<double>(s.f_pos[static_cast<std::size_t>(k)])) < 1e-12);
      for (int k = 0; k < e.f_mlp.size(); ++k) CHECK(std::abs(e.f_mlp[k] - static_cast<double>(s.f_mlp[static_cast<std::size_t>(k)])) < 1e-10);
    }
  }
}

TEST_CASE("range, determinism and direction independence of the trunk") {
  std::mt19937_64 rng(8);
  FieldParams p = init_field(FieldConfig{}, unit_box(), 5);
  // Large weights push the activations into saturation.
  p.theta *= 25.0;
  for (int i = 0; i < 200; ++i) {
    const Vec3 x = random_point(p.bounds, rng);
    const Vec3 d1 = test::random_unit(rng), d2 = test::random_unit(rng);
    const PointEval a = eval_point(p, x, d1), b = eval_point(p, x, d1), c = eval_point(p, x, d2);
    CHECK(a.sigma >= 0.0);
    CHECK((a.color.array() >= 0.0).all());
    CHECK((a.color.array() <= 1.0).all());
    CHECK(a.sigma == b.sigma);
    CHECK(a.color == b.color);
    CHECK(a.f_mlp == b.f_mlp);
    CHECK(a.f_mlp == c.f_mlp);
    CHECK(a.sigma == c.sigma);
  }
}

TEST_CASE("batch evaluation with feature subsets") {
  std::mt19937_64 rng(9);
  const FieldParams p = init_field(FieldConfig{}, unit_box(), 7);
  Eigen::Matrix3Xd x(3, 16), d(3, 16);
  for (int i = 0; i < 16; ++i) {
    x.col(i) = random_point(p.bounds, rng);
    d.col(i) = test::random_unit(rng);
  }
  const std::vector<int> dims{0, 5, 31, 32, 46};
  const BatchOutput out = eval_batch(p, x, d, BatchRequest{true, dims});
  REQUIRE(out.features.rows() == 5);
  for (int i = 0; i < 16; ++i) {
    const PointEval e = eval_point(p, x.col(i), d.col(i));
    Eigen::VectorXd full(47);
    full << e.f_pos, e.f_mlp;
    for (int r = 0; r < 5; ++r) CHECK(out.features(r, i) == doctest::Approx(full[dims[static_cast<std::size_t>(r)]]).epsilon(1e-12));
    CHECK(out.sigma[i] == doctest::Approx(e.sigma).epsilon(1e-12));
  }
  const BatchOutput none = eval_batch(p, x, d, BatchRequest{false, {}});
  CHECK(none.features.rows() == 0);
  CHECK(none.color.cols() == 0);
}

TEST_CASE("non-finite parameters are rejected") {
  FieldParams p = init_field(FieldConfig{}, unit_box(), 3);
  p.theta[10] = std::numeric_limits<double>::quiet_NaN();
  try {
    eval_point(p, Vec3::Zero(), Vec3(0, 0, -1));
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kCorruptCheckpoint);
  }
}

TEST_CASE("checkpoint round trip") {
  FieldConfig cfg;
  cfg.pos_octaves = {5, 4, 3};
  cfg.trunk_width = 24;
  const FieldParams p = init_field(cfg, unit_box(), 11);
  const auto bytes = encode_checkpoint(p);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "MLNF");
  const FieldParams q = decode_checkpoint(bytes);
  CHECK(q.theta == p.theta);
  CHECK(q.config.pos_octaves == cfg.pos_octaves);
  CHECK(q.config.trunk_width == 24);
  CHECK(q.bounds.lo == p.bounds.lo);
  CHECK(q.bounds.hi == p.bounds.hi);
  CHECK(encode_checkpoint(q) == bytes);

  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad), Error);
  auto cut = bytes;
  cut.resize(cut.size() - 3);
  CHECK_THROWS_AS(decode_checkpoint(cut), Error);
}

TEST_CASE("color loss gradient matches long double central differences") {
  std::mt19937_64 rng(21);
  FieldConfig cfg;
  cfg.trunk_width = 16;
  cfg.trunk_depth = 2;
  cfg.color_hidden = 8;
  FieldParams p = init_field(cfg, unit_box(), 4);
  std::normal_distribution<double> n(0.0, 0.1);
  for (Eigen::Index i = 0; i < p.theta.size(); ++i) p.theta[i] += n(rng);
  const auto rays = box_rays(p.bounds, 1, rng);
  const SampleBatch batch = stratified_samples(rays, 8, 3);
  Eigen::Matrix3Xd target(3, 1);
  target << 0.2, 0.7, 0.4;
  const ColorLoss l = color_loss(p, rays, batch, target);
  const auto gc = test::check_gradient(p, batch, rays, target, l.grad, 1e-5, 1e-4);
  INFO("compared " << gc.compared << ", kinks " << gc.skipped_kink << ", worst " << gc.worst);
  CHECK(gc.failures == 0);
  CHECK(gc.compared > p.size() / 2);
  CHECK(l.loss == doctest::Approx(static_cast<double>(test::FieldOracle(p).color_loss(batch, rays, target))).epsilon(1e-12));
}

TEST_CASE("background compositing gradient matches the oracle") {
  std::mt19937_64 rng(22);
  FieldConfig cfg;
  cfg.trunk_width = 16;
  cfg.trunk_depth = 2;
  cfg.color_hidden = 8;
  FieldParams p = init_field(cfg, unit_box(), 5);
  const auto rays = box_rays(p.bounds, 2, rng);
  const SampleBatch batch = stratified_samples(rays, 6, 8);
  Eigen::Matrix3Xd target(3, 2), bg(3, 2);
  target << 0.2, 0.9, 0.7, 0.1, 0.4, 0.5;
  bg << 0.8, 0.3, 0.1, 0.6, 0.95, 0.05;
  const ColorLoss l = color_loss(p, rays, batch, target, &bg);
  const auto gc = test::check_gradient(p, batch, rays, target, l.grad, 1e-5, 1e-4, 1e-8, &bg);
  INFO("compared " << gc.compared << ", worst " << gc.worst);
  CHECK(gc.failures == 0);
  CHECK(gc.compared > p.size() / 2);
  CHECK(l.loss == doctest::Approx(static_cast<double>(test::FieldOracle(p).color_loss(batch, rays, target, nullptr, &bg))).epsilon(1e-12));
  CHECK(l.loss != doctest::Approx(color_loss(p, rays, batch, target).loss));
}

TEST_CASE("zero learning rate leaves the parameters unchanged") {
  const SyntheticScene scene = make_reference_scene();
  const Intrinsics k = Intrinsics::from_fov(16, 16, 60);
  const auto poses = make_trajectory(scene, TrajectoryLayout{}, 2, 1).poses;
  std::vector<PosedImage> imgs;
  for (const auto& pose : poses) imgs.push_back(raytrace(scene, pose, k));
  const FieldParams p = init_field(FieldConfig{}, scene.bounds, 1);
  TrainConfig tc;
  tc.steps = 1;
  tc.batch_rays = 16;
  tc.lr_start = tc.lr_end = 0.0;
  const TrainResult r = train(p, imgs, tc);
  CHECK(r.params.theta == p.theta);
  CHECK(r.loss_log.size() == 1);
}

TEST_CASE("divergence names the step") {
  const SyntheticScene scene = make_reference_scene();
  const Intrinsics k = Intrinsics::from_fov(8, 8, 60);
  PosedImage img = raytrace(scene, make_trajectory(scene, TrajectoryLayout{}, 1, 1).poses[0], k);
  for (double& v : img.image.data) v = std::numeric_limits<double>::quiet_NaN();
  TrainConfig tc;
  tc.steps = 3;
  tc.batch_rays = 8;
  try {
    train(init_field(FieldConfig{}, scene.bounds, 1), std::span(&img, 1), tc);
    FAIL("expected divergence");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kDivergence);
    CHECK(std::string(e.what()).find("step 0") != std::string::npos);
  }
}

TEST_CASE("single-colour scene trains above 25 dB") {
  SyntheticScene scene;
  scene.bounds.lo = Vec3(-4, -4, -1);
  scene.bounds.hi = Vec3(4, 4, 2);
  scene.primitives.push_back(Plane{Vec3::Zero(), Vec3::UnitZ(), 4.0, Texture::constant(Vec3(0.3, 0.6, 0.45))});
  const Intrinsics k = Intrinsics::from_fov(16, 16, 50);
  TrajectoryLayout l;
  l.kind = LayoutKind::kRing;
  l.site_radius = 2.0;
  l.height = 1.8;
  std::vector<PosedImage> imgs;
  for (const auto& pose : make_trajectory(scene, l, 8, 0).poses) imgs.push_back(raytrace(scene, pose, k));
  TrainConfig tc;
  tc.steps = 2000;
  tc.batch_rays = 64;
  tc.samples_per_ray = 16;
  const TrainResult r = train(init_field(FieldConfig{}, scene.bounds, 3), imgs, tc);
  for (double v : r.loss_log) REQUIRE(std::isfinite(v));
  double mean = 0.0;
  for (const auto& img : imgs) mean += psnr(render_image(r.params, img.pose, k, 16), img.image);
  mean /= static_cast<double>(imgs.size());
  CHECK(mean > 25.0);
}
