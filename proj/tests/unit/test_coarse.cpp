#include <doctest.h>

#include <chrono>
#include <cmath>
#include <random>
#include <set>

#include "radloc/coarse.hpp"
#include "radloc/errors.hpp"
#include "radloc/renderer.hpp"
#include "support.hpp"

using namespace radloc;

namespace {

// Sites on a square, each with two opposite headings.
std::vector<Pose> site_layout(std::mt19937_64& rng, int per_heading, std::vector<int>& truth) {
  std::normal_distribution<double> jitter(0.0, 0.15);
  std::vector<Pose> poses;
  const std::array<Vec3, 4> sites{Vec3(-5, -5, 2), Vec3(5, -5, 2), Vec3(5, 5, 2), Vec3(-5, 5, 2)};
  for (int s = 0; s < 4; ++s)
    for (int h = 0; h < 2; ++h)
      for (int i = 0; i < per_heading; ++i) {
        const double yaw = test::rad(45.0 + 180.0 * h + 90.0 * s) + 0.05 * jitter(rng);
        const Vec3 at = sites[s] + Vec3(jitter(rng), jitter(rng), jitter(rng));
        poses.push_back(look_at(at, at + Vec3(std::cos(yaw), std::sin(yaw), -0.3), Vec3::UnitZ()));
        truth.push_back(2 * s + h);
      }
  return poses;
}

Eigen::MatrixXd unit_rows(std::mt19937_64& rng, int rows, int cols) {
  std::normal_distribution<double> g;
  Eigen::MatrixXd m = Eigen::MatrixXd::NullaryExpr(rows, cols, [&] { return g(rng); });
  m.rowwise().normalize();
  return m;
}

}  // namespace

TEST_CASE("two-stage clustering recovers sites and headings") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(200 + seed);
    std::vector<int> truth;
    const auto poses = site_layout(rng, 6, truth);
    ClusterTrace trace;
    const auto groups = two_stage_cluster(poses, 4, 2, seed, &trace);
    REQUIRE(groups.size() == 8);
    std::set<int> seen;
    for (const auto& g : groups) {
      REQUIRE(!g.members.empty());
      const int t = truth[static_cast<std::size_t>(g.members.front())];
      for (int m : g.members) CHECK(truth[static_cast<std::size_t>(m)] == t);
      CHECK(seen.insert(t).second);
      CHECK(std::abs(g.mean_direction.norm() - 1.0) < 1e-9);

      // The representative is the member closest under the combined distance.
      double best = std::numeric_limits<double>::infinity();
      for (int m : g.members)
        best = std::min(best, combined_distance(poses[static_cast<std::size_t>(m)], g.centroid, g.mean_direction));
      CHECK(combined_distance(g.representative, g.centroid, g.mean_direction) == best);
      CHECK(initial_pose(g).translation == poses[static_cast<std::size_t>(g.representative_id)].translation);
    }
    CHECK(trace.max_center_norm_error < 1e-9);

    const auto again = two_stage_cluster(poses, 4, 2, seed);
    CHECK(again == groups);
  }
}

TEST_CASE("identical poses collapse into one group") {
  std::mt19937_64 rng(7);
  const Pose p = test::random_pose(rng);
  const std::vector<Pose> poses(10, p);
  const auto groups = two_stage_cluster(poses, 3, 2, 1);
  REQUIRE(groups.size() == 1);
  CHECK(groups[0].members.size() == 10);
  CHECK(initial_pose(groups[0]).translation == p.translation);
  CHECK_THROWS_AS(two_stage_cluster({}, 1, 1, 0), Error);
}

TEST_CASE("inward and outward arcs separate by orientation") {
  // Over a full ring both sets cover every heading; on a 60 degree arc the
  // two sets face roughly opposite ways.
  std::vector<Pose> poses;
  for (int i = 0; i < 12; ++i) {
    const double a = test::rad(-30.0 + 60.0 * i / 11);
    const Vec3 at(4 * std::cos(a), 4 * std::sin(a), 1);
    poses.push_back(look_at(at, Vec3(0, 0, 1), Vec3::UnitZ()));
    poses.push_back(look_at(at, 2 * at - Vec3(0, 0, 1), Vec3::UnitZ()));
  }
  const auto groups = two_stage_cluster(poses, 1, 2, 3);
  REQUIRE(groups.size() == 2);
  for (const auto& g : groups) {
    const int parity = g.members.front() % 2;
    for (int m : g.members) CHECK(m % 2 == parity);
  }
}

TEST_CASE("ArcFace with zero margin is cosine softmax cross-entropy") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::MatrixXd e = unit_rows(rng, 6, 9);
    const Eigen::VectorXd f = unit_rows(rng, 1, 9).row(0).transpose();
    const int y = trial % 6;
    const double s = 8.0;
    const Eigen::VectorXd logits = s * (e * f);
    const double lse = std::log((logits.array() - logits.maxCoeff()).exp().sum()) + logits.maxCoeff();
    CHECK(arcface_loss(e, f, y, 0.0, s).loss == doctest::Approx(lse - logits[y]).epsilon(1e-12));
  }
}

TEST_CASE("ArcFace margin floor") {
  Eigen::MatrixXd e = Eigen::MatrixXd::Identity(4, 4);
  const Eigen::VectorXd f = Eigen::VectorXd::Unit(4, 2);
  // With s = 8 the floor log(1 + 3 exp(-8 cos 0.3)) is well above rounding.
  const double floor = std::log1p(3.0 * std::exp(-8.0 * std::cos(0.3)));
  CHECK(arcface_loss(e, f, 2, 0.3, 8.0).loss == doctest::Approx(floor).epsilon(1e-12));
  CHECK(arcface_loss(e, f, 2, 0.0, 8.0).loss < arcface_loss(e, f, 2, 0.3, 8.0).loss);
  CHECK_THROWS_AS(arcface_loss(2.0 * e, f, 2, 0.3, 8.0), Error);
  CHECK_THROWS_AS(arcface_loss(e, 0.5 * f, 2, 0.3, 8.0), Error);
}

TEST_CASE("ArcFace gradients match central differences") {
  std::mt19937_64 rng(13);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::MatrixXd e = unit_rows(rng, 5, 7);
    const Eigen::VectorXd f = unit_rows(rng, 1, 7).row(0).transpose();
    const int y = trial % 5;
    const double m = 0.25, s = 6.0;
    const ArcFaceResult r = arcface_loss(e, f, y, m, s);
    // The loss is evaluated off the unit sphere here, through the same
    // closed form, so the perturbation is not renormalized.
    auto loss = [&](const Eigen::MatrixXd& ee, const Eigen::VectorXd& ff) {
      Eigen::VectorXd c = ee * ff;
      const double cy = c[y], sy = std::sqrt(std::max(1e-24, 1.0 - cy * cy));
      c[y] = cy * std::cos(m) - sy * std::sin(m);
      const Eigen::VectorXd l = s * c;
      return std::log((l.array() - l.maxCoeff()).exp().sum()) + l.maxCoeff() - l[y];
    };
    CHECK(loss(e, f) == doctest::Approx(r.loss).epsilon(1e-12));
    const double h = 1e-6;
    auto rel = [](double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8}); };
    for (int i = 0; i < 7; ++i) {
      Eigen::VectorXd fp = f, fm = f;
      fp[i] += h;
      fm[i] -= h;
      worst = std::max(worst, rel((loss(e, fp) - loss(e, fm)) / (2 * h), r.grad_feature[i]));
    }
    for (int a = 0; a < 5; ++a)
      for (int b = 0; b < 7; ++b) {
        Eigen::MatrixXd ep = e, em = e;
        ep(a, b) += h;
        em(a, b) -= h;
        worst = std::max(worst, rel((loss(ep, f) - loss(em, f)) / (2 * h), r.grad_embeddings(a, b)));
      }
  }
  CHECK(worst <= 1e-4);
}

TEST_CASE("place predictor training, prediction and persistence") {
  const SyntheticScene scene = make_reference_scene();
  const Intrinsics k = Intrinsics::from_fov(32, 32, 60);
  const auto traj = make_trajectory(scene, TrajectoryLayout{}, 48, 3);
  const auto groups = two_stage_cluster(traj.poses, 4, 2, 1);
  std::vector<int> label(traj.poses.size());
  for (const auto& g : groups)
    for (int m : g.members) label[static_cast<std::size_t>(m)] = g.id;
  std::vector<RgbImage> images;
  for (const auto& p : traj.poses) images.push_back(raytrace(scene, p, k).image);

  PlaceConfig cfg;
  cfg.epochs = 30;
  const PlacePredictor untrained = make_place_predictor(static_cast<int>(groups.size()), 32, 32, cfg);
  for (int r = 0; r < untrained.classes(); ++r) CHECK(std::abs(untrained.embeddings.row(r).norm() - 1.0) < 1e-12);
  try {
    predict_place(untrained, images[0]);
    FAIL("expected an untrained-predictor error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kUntrained);
  }

  const PlaceTrainResult tr = train_place_predictor(images, label, static_cast<int>(groups.size()), cfg);
  const PlacePredictor& p = tr.predictor;
  CHECK(tr.loss_log.back() < tr.loss_log.front());
  for (int r = 0; r < p.classes(); ++r) CHECK(std::abs(p.embeddings.row(r).norm() - 1.0) < 1e-9);

  int correct = 0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const PlacePrediction a = predict_place(p, images[i]), b = predict_place(p, images[i]);
    CHECK(a.group == b.group);
    CHECK(a.probabilities == b.probabilities);
    CHECK(a.probabilities.sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(a.confidence > 0.0);
    CHECK(a.confidence < 1.0);
    if (a.group == label[i] && a.confidence > 0.5) ++correct;
  }
  INFO("correct with confidence > 0.5: " << correct << " / " << images.size());
  CHECK(correct >= static_cast<int>(0.9 * images.size()));

  const PlacePredictor back = decode_place_predictor(encode_place_predictor(p));
  CHECK(back.theta == p.theta);
  CHECK(back.embeddings == p.embeddings);
  CHECK(back.head_w == p.head_w);
  CHECK(encode_place_predictor(back) == encode_place_predictor(p));
  CHECK(predict_place(back, images[3]).probabilities == predict_place(p, images[3]).probabilities);

  // Classifier latency against one feature render at the same resolution.
  const FieldParams f = init_field(FieldConfig{}, scene.bounds, 1);
  auto time = [](auto&& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };
  const double t_pred = time([&] { predict_place(p, images[0]); });
  const double t_render = time([&] { render_map(f, traj.poses[0], k); });
  CHECK(t_pred < t_render);
}

TEST_CASE("pose group JSON round trip") {
  std::mt19937_64 rng(17);
  std::vector<int> truth;
  const auto groups = two_stage_cluster(site_layout(rng, 3, truth), 4, 2, 2);
  const auto back = decode_pose_groups(encode_pose_groups(groups));
  CHECK(back == groups);
  CHECK(encode_pose_groups(back) == encode_pose_groups(groups));
  CHECK_THROWS_AS(decode_pose_groups("{\"version\": 2, \"groups\": []}"), Error);
}
