#include <doctest.h>

#include <filesystem>
#include <random>
#include <set>

#include "radloc/errors.hpp"
#include "radloc/matcher.hpp"
#include "radloc/synthscene.hpp"

using namespace radloc;

namespace {

// Written from the definition: argmax over squared distances with strict
// comparisons, so the first index wins ties.
std::vector<std::pair<int, int>> double_loop(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  auto best = [](const Eigen::MatrixXd& x, int col, const Eigen::MatrixXd& y) {
    int arg = 0;
    double d = (x.col(col) - y.col(0)).squaredNorm();
    for (int j = 1; j < y.cols(); ++j) {
      const double e = (x.col(col) - y.col(j)).squaredNorm();
      if (e < d) {
        d = e;
        arg = j;
      }
    }
    return arg;
  };
  std::vector<std::pair<int, int>> out;
  for (int i = 0; i < a.cols(); ++i) {
    const int j = best(a, i, b);
    if (best(b, j, a) == i) out.emplace_back(i, j);
  }
  return out;
}

std::vector<std::pair<int, int>> pairs_of(const std::vector<MutualPair>& m) {
  std::vector<std::pair<int, int>> out;
  for (const auto& p : m) out.emplace_back(p.i, p.j);
  return out;
}

}  // namespace

TEST_CASE("mutual NN agrees with a double loop on random sets") {
  std::mt19937_64 rng(51);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_int_distribution<int> coarse(0, 2);
  for (int trial = 0; trial < 400; ++trial) {
    const int d = 1 + trial % 7;
    const int na = trial < 100 ? 36 : 5 + trial % 90, nb = trial < 100 ? 36 : 3 + (trial * 7) % 120;
    // Every fourth trial uses coarse integer values to create ties.
    auto gen = [&] { return trial % 4 == 0 ? static_cast<double>(coarse(rng)) : u(rng); };
    const Eigen::MatrixXd a = Eigen::MatrixXd::NullaryExpr(d, na, gen);
    const Eigen::MatrixXd b = Eigen::MatrixXd::NullaryExpr(d, nb, gen);
    const auto fast = mutual_nn(a, b), ref = mutual_nn_reference(a, b);
    const auto expected = double_loop(a, b);
    REQUIRE(pairs_of(fast) == expected);
    REQUIRE(pairs_of(ref) == expected);
    for (const auto& p : fast) CHECK(p.score == doctest::Approx(-(a.col(p.i) - b.col(p.j)).norm()));

    // Partial matching and role symmetry.
    std::set<int> is, js;
    for (const auto& p : fast) {
      CHECK(is.insert(p.i).second);
      CHECK(js.insert(p.j).second);
    }
    if (trial % 4 != 0) {
      auto swapped = pairs_of(mutual_nn(b, a));
      for (auto& p : swapped) std::swap(p.first, p.second);
      std::sort(swapped.begin(), swapped.end());
      CHECK(swapped == expected);
    }
  }
}

TEST_CASE("duplicate query rows match at most once") {
  Eigen::MatrixXd a(2, 3), b(2, 2);
  a << 0, 0, 5, 1, 1, 5;
  b << 0, 5, 1, 5;
  const auto m = mutual_nn(a, b);
  REQUIRE(m.size() == 2);
  CHECK(m[0].i == 0);
  CHECK(m[0].j == 0);
  CHECK(m[1].i == 2);
  CHECK(m[1].j == 1);
  CHECK_THROWS_AS(mutual_nn(Eigen::MatrixXd(2, 0), b), Error);
  CHECK_THROWS_AS(mutual_nn(Eigen::MatrixXd::Zero(3, 2), b), Error);
}

TEST_CASE("mask carrying the discriminative dims keeps the matching") {
  std::mt19937_64 rng(53);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const int n = 60;
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(8, n), b = Eigen::MatrixXd::Zero(8, n);
  for (int i = 0; i < n; ++i) {
    for (int d : {1, 3, 6}) {
      a(d, i) = u(rng);
      b(d, (i * 7) % n) = a(d, i) + 0.01 * u(rng);
    }
    // Non-discriminative dims: the same constant on both sides.
    for (int d : {0, 2, 4, 5, 7}) a(d, i) = b(d, i) = 0.25 * d;
  }
  const std::vector<int> dims{1, 3, 6};
  Eigen::MatrixXd am(3, n), bm(3, n);
  for (int r = 0; r < 3; ++r) {
    am.row(r) = a.row(dims[static_cast<std::size_t>(r)]);
    bm.row(r) = b.row(dims[static_cast<std::size_t>(r)]);
  }
  CHECK(pairs_of(mutual_nn(a, b)) == pairs_of(mutual_nn(am, bm)));
}

TEST_CASE("oracle query features equal the rendered map and match themselves") {
  const SyntheticScene scene = make_reference_scene();
  FieldParams f = init_field(FieldConfig{}, scene.bounds, 5);
  const FieldLayout lay(f.config);
  f.theta[lay.density_b.offset] += 4.0;
  const Intrinsics k = Intrinsics::from_fov(24, 24, 60);
  const Pose pose = make_trajectory(scene, TrajectoryLayout{}, 1, 2).poses[0];
  const auto mask = SelectionMask::from_indices(47, {0, 3, 9, 20, 40}, 5);
  const QueryFeatureMap q = oracle_query_features(f, pose, k, 2, mask, 32, 7);
  CHECK(q.image_id == 7);
  CHECK(q.dim() == 5);
  RenderOptions o;
  o.stride = 2;
  o.selection = mask;
  o.color = false;
  const RenderedMap m = render_map(f, pose, k, o);
  CHECK(q.features == m.features);
  o.color = true;
  CHECK((render_map(f, pose, k, o).features - m.features).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(q.size() == m.size());

  const LiftedCloud cloud = lift_to_3d(m);
  REQUIRE(cloud.size() > 0);
  const Correspondences c = match(q, cloud);
  CHECK(c.size() == cloud.size());
  for (const auto& x : c.items) {
    CHECK(cloud.grid_index[static_cast<std::size_t>(x.cloud_index)] == x.query_index);
    // Distances come from the expanded form, so identical vectors score
    // zero only up to cancellation.
    CHECK(std::abs(x.score) < 1e-6);
    CHECK(x.point == cloud.points.col(x.cloud_index));
    CHECK(x.pixel.row == q.pixel(x.query_index).row);
  }

  QueryFeatureMap wrong = q;
  wrong.features = Eigen::MatrixXd::Zero(4, q.size());
  CHECK_THROWS_AS(match(wrong, cloud), Error);
}

TEST_CASE("correspondence CSV round trip") {
  Correspondences c;
  c.items.push_back({{3, 4}, Vec3(0.1, -2.0 / 3.0, 1e-17), -0.125, 0, 0});
  c.items.push_back({{0, 11}, Vec3(5, 6, 7), -1.0 / 3.0, 1, 1});
  const std::string csv = correspondences_csv(c);
  CHECK(csv.rfind("row,col,x,y,z,score\n", 0) == 0);
  const auto path = std::filesystem::temp_directory_path() / "radloc_corr_test.csv";
  save_correspondences(path, c);
  const Correspondences back = load_correspondences(path);
  REQUIRE(back.size() == 2);
  for (int i = 0; i < 2; ++i) {
    CHECK(back.items[i].pixel.row == c.items[i].pixel.row);
    CHECK(back.items[i].pixel.col == c.items[i].pixel.col);
    CHECK(back.items[i].point == c.items[i].point);
    CHECK(back.items[i].score == c.items[i].score);
  }
  std::filesystem::remove(path);
}
