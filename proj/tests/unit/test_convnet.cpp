#include <doctest.h>

#include <filesystem>
#include <random>

#include "radloc/convnet.hpp"
#include "radloc/errors.hpp"
#include "radloc/projector.hpp"
#include "radloc/renderer.hpp"
#include "radloc/synthscene.hpp"

using namespace radloc;

namespace {

Activation random_activation(std::mt19937_64& rng, int ch, int rows, int cols) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Activation a;
  a.rows = rows;
  a.cols = cols;
  a.data = Eigen::MatrixXd::NullaryExpr(ch, rows * cols, [&] { return u(rng); });
  return a;
}

// Direct 3x3 convolution with zero padding, weights indexed as the network
// stores them: column-major (out, in * 9 + ky * 3 + kx), biases after.
Activation direct_conv(const Activation& x, const double* w, const double* b, int out_ch, int stride, bool relu) {
  const int in_ch = static_cast<int>(x.data.rows());
  Activation y;
  y.rows = (x.rows - 1) / stride + 1;
  y.cols = (x.cols - 1) / stride + 1;
  y.data.resize(out_ch, y.rows * y.cols);
  for (int o = 0; o < out_ch; ++o)
    for (int r = 0; r < y.rows; ++r)
      for (int c = 0; c < y.cols; ++c) {
        double s = b[o];
        for (int k = 0; k < in_ch; ++k)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int yy = r * stride + ky - 1, xx = c * stride + kx - 1;
              if (yy < 0 || yy >= x.rows || xx < 0 || xx >= x.cols) continue;
              s += w[o + out_ch * (k * 9 + ky * 3 + kx)] * x.data(k, yy * x.cols + xx);
            }
        y.data(o, r * y.cols + c) = relu ? std::max(0.0, s) : s;
      }
  return y;
}

}  // namespace

TEST_CASE("network forward equals a direct convolution") {
  std::mt19937_64 rng(91);
  const ConvNet net({{3, 4, 1, true}, {4, 5, 2, true}, {5, 2, 1, false}});
  CHECK(net.parameter_count() == 4 * 27 + 4 + 5 * 36 + 5 + 2 * 45 + 2);
  Eigen::VectorXd theta = net.init(3);
  std::normal_distribution<double> g;
  for (Eigen::Index i = 0; i < theta.size(); ++i) theta[i] += 0.1 * g(rng);  // nonzero biases too
  for (auto [rows, cols] : {std::pair{7, 9}, std::pair{8, 8}, std::pair{1, 5}}) {
    const Activation x = random_activation(rng, 3, rows, cols);
    Activation ref = x;
    int off = 0;
    for (const auto& l : net.layers()) {
      const double* w = theta.data() + off;
      off += l.out_channels * l.in_channels * 9;
      ref = direct_conv(ref, w, theta.data() + off, l.out_channels, l.stride, l.relu);
      off += l.out_channels;
    }
    const Activation y = net.forward(theta, x);
    CHECK(y.rows == ref.rows);
    CHECK(y.cols == ref.cols);
    CHECK((y.data - ref.data).cwiseAbs().maxCoeff() < 1e-12);
  }
  CHECK_THROWS_AS(ConvNet({{3, 4, 1, true}, {5, 2, 1, false}}), Error);
  CHECK_THROWS_AS(net.forward(theta, random_activation(rng, 2, 4, 4)), Error);
}

TEST_CASE("network gradients match central differences") {
  std::mt19937_64 rng(93);
  const ConvNet net({{2, 3, 1, true}, {3, 3, 2, true}, {3, 2, 1, false}});
  Eigen::VectorXd theta = net.init(5);
  std::normal_distribution<double> g;
  for (Eigen::Index i = 0; i < theta.size(); ++i) theta[i] += 0.05 * g(rng);
  const Activation x = random_activation(rng, 2, 6, 5);
  ConvNet::Tape tape;
  const Activation y = net.forward(theta, x, &tape);
  const Eigen::MatrixXd probe = Eigen::MatrixXd::NullaryExpr(y.data.rows(), y.data.cols(), [&] { return g(rng); });
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(theta.size());
  net.backward(theta, tape, probe, grad);

  // L = <probe, y>; a ReLU crossing inside the stencil would show up as a
  // single outlier, so count them rather than bounding the worst case.
  const double h = 1e-6;
  int bad = 0;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    Eigen::VectorXd tp = theta, tm = theta;
    tp[i] += h;
    tm[i] -= h;
    const double fd = (net.forward(tp, x).data.cwiseProduct(probe).sum() - net.forward(tm, x).data.cwiseProduct(probe).sum()) / (2 * h);
    if (std::abs(fd - grad[i]) > 1e-5 * std::max(1.0, std::abs(fd))) ++bad;
  }
  CHECK(bad == 0);

  // Backward accumulates.
  net.backward(theta, tape, probe, grad);
  Eigen::VectorXd once = Eigen::VectorXd::Zero(theta.size());
  net.backward(theta, tape, probe, once);
  CHECK((grad - 2.0 * once).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("im2col and col2im are adjoint") {
  std::mt19937_64 rng(95);
  std::normal_distribution<double> g;
  for (int stride : {1, 2, 3})
    for (auto [rows, cols] : {std::pair{5, 7}, std::pair{6, 6}, std::pair{2, 3}}) {
      const Activation x = random_activation(rng, 3, rows, cols);
      const Eigen::MatrixXd c = im2col(x, stride);
      const Eigen::MatrixXd y = Eigen::MatrixXd::NullaryExpr(c.rows(), c.cols(), [&] { return g(rng); });
      const Activation back = col2im(y, 3, rows, cols, stride);
      CHECK(c.cwiseProduct(y).sum() == doctest::Approx(x.data.cwiseProduct(back.data).sum()).epsilon(1e-12));
    }
}

TEST_CASE("bilinear resampler") {
  std::mt19937_64 rng(97);
  std::normal_distribution<double> g;

  SUBCASE("same size is the identity") {
    const Resampler r(5, 6, 5, 6);
    const Eigen::MatrixXd x = Eigen::MatrixXd::NullaryExpr(3, 30, [&] { return g(rng); });
    CHECK((r.forward(x) - x).cwiseAbs().maxCoeff() < 1e-15);
  }
  SUBCASE("halving averages 2x2 blocks") {
    const Resampler r(4, 6, 2, 3);
    const Eigen::MatrixXd x = Eigen::MatrixXd::NullaryExpr(2, 24, [&] { return g(rng); });
    const Eigen::MatrixXd y = r.forward(x);
    for (int rr = 0; rr < 2; ++rr)
      for (int cc = 0; cc < 3; ++cc) {
        const auto at = [&](int a, int b) { return x.col(a * 6 + b); };
        const Eigen::VectorXd avg = 0.25 * (at(2 * rr, 2 * cc) + at(2 * rr, 2 * cc + 1) + at(2 * rr + 1, 2 * cc) + at(2 * rr + 1, 2 * cc + 1));
        CHECK((y.col(rr * 3 + cc) - avg).cwiseAbs().maxCoeff() < 1e-12);
      }
  }
  SUBCASE("constants are preserved and backward is the adjoint") {
    for (auto [ir, ic, orr, oc] : {std::array{4, 4, 7, 9}, std::array{9, 5, 3, 8}, std::array{1, 1, 3, 3}}) {
      const Resampler r(ir, ic, orr, oc);
      const Eigen::MatrixXd ones = Eigen::MatrixXd::Constant(2, ir * ic, 1.5);
      CHECK((r.forward(ones).array() - 1.5).abs().maxCoeff() < 1e-12);
      const Eigen::MatrixXd x = Eigen::MatrixXd::NullaryExpr(2, ir * ic, [&] { return g(rng); });
      const Eigen::MatrixXd y = Eigen::MatrixXd::NullaryExpr(2, orr * oc, [&] { return g(rng); });
      CHECK(r.forward(x).cwiseProduct(y).sum() == doctest::Approx(x.cwiseProduct(r.backward(y)).sum()).epsilon(1e-12));
    }
  }
  CHECK_THROWS_AS(Resampler(0, 2, 2, 2), Error);
}

TEST_CASE("projector training and persistence") {
  const SyntheticScene scene = make_reference_scene();
  const Intrinsics k = Intrinsics::from_fov(16, 16, 60);
  FieldParams field = init_field(FieldConfig{}, scene.bounds, 4);
  const FieldLayout lay(field.config);
  field.theta[lay.density_b.offset] += 4.0;
  std::vector<PosedImage> images;
  for (const auto& p : make_trajectory(scene, TrajectoryLayout{}, 10, 6).poses) images.push_back(raytrace(scene, p, k));

  const ProjectorParams fresh = make_projector(47, 16, 16, 2, 1);
  try {
    extract_query_features(images[0].image, fresh, std::nullopt);
    FAIL("expected an untrained-projector error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kUntrained);
  }

  ProjectorConfig cfg;
  cfg.epochs = 15;
  cfg.samples_per_ray = 16;
  const ProjectorTrainResult tr = train_projector(field, images, cfg);
  const ProjectorParams& p = tr.params;
  REQUIRE(tr.train_loss.size() == 15);
  CHECK(tr.train_loss.back() < tr.train_loss.front());
  CHECK(std::isfinite(p.val_loss));
  CHECK(p.trained);

  // The held-out loss is the last image's projector loss against its render.
  RenderOptions o;
  o.stride = 2;
  o.samples_per_ray = 16;
  o.color = false;
  const Eigen::MatrixXd target = render_map(field, images.back().pose, k, o).features;
  CHECK(projector_loss(p, images.back().image, target) == doctest::Approx(p.val_loss).epsilon(1e-12));

  const QueryFeatureMap all = extract_query_features(images[0].image, p, std::nullopt, 4);
  CHECK(all.grid_width == 8);
  CHECK(all.grid_height == 8);
  CHECK(all.dim() == 47);
  CHECK(all.image_id == 4);
  const auto mask = SelectionMask::from_indices(47, {2, 10, 30}, 3);
  const QueryFeatureMap sel = extract_query_features(images[0].image, p, mask);
  CHECK(sel.feature_dims == std::vector<int>{2, 10, 30});
  for (int r = 0; r < 3; ++r) CHECK(sel.features.row(r) == all.features.row(sel.feature_dims[static_cast<std::size_t>(r)]));
  CHECK_THROWS_AS(extract_query_features(images[0].image, p, SelectionMask::from_indices(10, {1}, 1)), Error);
  CHECK_THROWS_AS(extract_query_features(RgbImage(8, 8), p, std::nullopt), Error);

  const auto path = std::filesystem::temp_directory_path() / "radloc_projector_test.bin";
  save_projector(path, p);
  const ProjectorParams back = load_projector(path);
  std::filesystem::remove(path);
  CHECK(back.theta == p.theta);
  CHECK(back.mean == p.mean);
  CHECK(back.scale == p.scale);
  CHECK(back.val_loss == p.val_loss);
  CHECK(extract_query_features(images[1].image, back, mask).features == extract_query_features(images[1].image, p, mask).features);

  auto bytes = encode_projector(p);
  bytes.pop_back();
  try {
    decode_projector(bytes);
    FAIL("expected a corrupt-checkpoint error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kCorruptCheckpoint);
  }
  bytes = encode_projector(p);
  bytes[0] = 'X';
  CHECK_THROWS_AS(decode_projector(bytes), Error);
}
