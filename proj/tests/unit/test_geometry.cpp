#include <doctest.h>

#include <cmath>
#include <random>

#include "radloc/errors.hpp"
#include "radloc/geometry.hpp"
#include "support.hpp"

using namespace radloc;
using radloc::test::rad;

TEST_CASE("compose with identity and inverse") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 50; ++i) {
    const Pose p = test::random_pose(rng);
    const Pose a = compose(Pose{}, p);
    CHECK((a.rotation - p.rotation).norm() < 1e-12);
    CHECK((a.translation - p.translation).norm() < 1e-12);
    const Pose id = compose(p, inverse(p));
    CHECK((id.rotation - Mat3::Identity()).norm() < 1e-9);
    CHECK(id.translation.norm() < 1e-9);
    const Pose id2 = compose(inverse(p), p);
    CHECK((id2.rotation - Mat3::Identity()).norm() < 1e-9);
    CHECK(id2.translation.norm() < 1e-9);
  }
}

TEST_CASE("two quarter turns about z make a half turn") {
  Pose q;
  q.rotation << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  Mat3 half;
  half << -1, 0, 0, 0, -1, 0, 0, 0, 1;
  CHECK((compose(q, q).rotation - half).norm() < 1e-15);
  CHECK((rotation_z(rad(90)) - q.rotation).norm() < 1e-15);
}

TEST_CASE("compose applies b first") {
  Pose a, b;
  a.rotation = rotation_z(rad(90));
  a.translation = Vec3(1, 0, 0);
  b.translation = Vec3(1, 0, 0);
  // b maps the origin to (1,0,0); a rotates that to (0,1,0) and shifts by (1,0,0).
  const Pose c = compose(a, b);
  CHECK((c.translation - Vec3(1, 1, 0)).norm() < 1e-12);
}

TEST_CASE("pose_error examples") {
  Pose a, b;
  auto e = pose_error(a, b);
  CHECK(e.translation == 0.0);
  CHECK(e.rotation_deg == 0.0);

  b.translation = Vec3(3, 4, 0);
  e = pose_error(a, b);
  CHECK(e.translation == doctest::Approx(5.0).epsilon(1e-15));
  CHECK(e.rotation_deg == 0.0);

  Pose c;
  c.rotation << 1, 0, 0, 0, std::cos(rad(10)), -std::sin(rad(10)), 0, std::sin(rad(10)), std::cos(rad(10));
  e = pose_error(a, c);
  CHECK(e.translation == 0.0);
  CHECK(e.rotation_deg == doctest::Approx(10.0).epsilon(1e-9));
}

TEST_CASE("rotation error is symmetric and within [0, 180]") {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 200; ++i) {
    const Pose a = test::random_pose(rng), b = test::random_pose(rng);
    const double ab = pose_error(a, b).rotation_deg, ba = pose_error(b, a).rotation_deg;
    CHECK(ab == ba);
    CHECK(ab >= 0.0);
    CHECK(ab <= 180.0);
  }
  Pose flip;
  flip.rotation = rotation_x(std::numbers::pi);
  CHECK(pose_error(Pose{}, flip).rotation_deg == doctest::Approx(180.0));
}

TEST_CASE("pose validity") {
  std::mt19937_64 rng(11);
  const Pose p = test::random_pose(rng);
  CHECK(p.is_valid());
  CHECK(std::abs(p.rotation.determinant() - 1.0) < 1e-9);
  Pose bad = p;
  bad.rotation(0, 0) += 1e-3;
  CHECK_FALSE(bad.is_valid());
  Pose mirror;
  mirror.rotation = -Mat3::Identity();
  CHECK_FALSE(mirror.is_valid());
}

TEST_CASE("pose bytes round trip") {
  std::mt19937_64 rng(13);
  const Pose p = test::random_pose(rng);
  std::vector<std::uint8_t> bytes;
  append_pose_bytes(p, bytes);
  REQUIRE(bytes.size() == 96);
  const Pose q = pose_from_bytes(bytes);
  CHECK(q.rotation == p.rotation);
  CHECK(q.translation == p.translation);
}

TEST_CASE("rays through the principal point and one focal length off axis") {
  Intrinsics k;
  k.fx = k.fy = 50.0;
  k.width = k.height = 100;
  k.cx = k.cy = 50.0;
  // Pixel index (49, 49) has its center at (49.5, 49.5); bearing takes
  // continuous coordinates directly.
  const Vec3 axis = bearing(k, Vec2(k.cx, k.cy));
  CHECK((axis - Vec3(0, 0, -1)).norm() < 1e-15);
  const Vec3 off = bearing(k, Vec2(k.cx + k.fx, k.cy));
  CHECK((off - Vec3(1, 0, -1).normalized()).norm() < 1e-15);
  const Vec3 down = bearing(k, Vec2(k.cx, k.cy + k.fy));
  CHECK((down - Vec3(0, -1, -1).normalized()).norm() < 1e-15);

  Pose p;
  p.translation = Vec3(1, 2, 3);
  const PixelIndex px{10, 20};
  const auto rays = generate_rays(p, k, std::span(&px, 1));
  REQUIRE(rays.size() == 1);
  CHECK(rays[0].origin == p.translation);
  CHECK((rays[0].direction - bearing(k, pixel_center(px))).norm() < 1e-15);
}

TEST_CASE("generate_rays covers the image row-major with unit directions") {
  std::mt19937_64 rng(17);
  const Intrinsics k = Intrinsics::from_fov(12, 8, 70);
  const Pose p = test::random_pose(rng);
  const auto rays = generate_rays(p, k);
  REQUIRE(rays.size() == 96);
  for (std::size_t i = 0; i < rays.size(); ++i) {
    CHECK(std::abs(rays[i].direction.norm() - 1.0) < 1e-9);
    const PixelIndex px{static_cast<int>(i) / 12, static_cast<int>(i) % 12};
    const auto uv = project(p, k, rays[i].at(7.0));
    REQUIRE(uv);
    CHECK((*uv - pixel_center(px)).norm() < 1e-6);
  }
  const PixelIndex outside{8, 0};
  CHECK_THROWS_AS(generate_rays(p, k, std::span(&outside, 1)), Error);
}

TEST_CASE("projection round trip at random depths") {
  std::mt19937_64 rng(19);
  std::uniform_real_distribution<double> u(0.0, 1.0), depth(0.1, 50.0);
  const Intrinsics k = Intrinsics::from_fov(64, 48, 60);
  for (int i = 0; i < 1000; ++i) {
    const Pose p = test::random_pose(rng, 10.0);
    const Vec2 px(u(rng) * k.width, u(rng) * k.height);
    const Vec3 world = p.translation + depth(rng) * (p.rotation * bearing(k, px));
    const auto back = project(p, k, world);
    REQUIRE(back);
    CHECK((*back - px).norm() < 1e-6);
  }
  CHECK_FALSE(project_camera(k, Vec3(0, 0, 1)));
}

TEST_CASE("stratified samples") {
  Ray r;
  r.t_near = 0.0;
  r.t_far = 1.0;
  const auto a = stratified_samples(std::span(&r, 1), 4, 42);
  const auto b = stratified_samples(std::span(&r, 1), 4, 42);
  CHECK(a.positions == b.positions);
  CHECK(a.t_start == b.t_start);
  for (int k = 0; k < 4; ++k) {
    CHECK(a.t_start[k] >= 0.25 * k);
    CHECK(a.t_start[k] < 0.25 * (k + 1));
  }

  std::mt19937_64 rng(23);
  std::vector<Ray> rays;
  for (int i = 0; i < 20; ++i) {
    Ray x;
    x.origin = Vec3(1, -2, 0.5);
    x.direction = test::random_unit(rng);
    x.t_near = 0.5 + i * 0.1;
    x.t_far = 3.0 + i;
    rays.push_back(x);
  }
  for (bool jitter : {true, false}) {
    const auto s = stratified_samples(rays, 16, 7, jitter);
    REQUIRE(s.ray_count() == 20);
    for (int ri = 0; ri < 20; ++ri) {
      const auto [lo, hi] = s.ray_range(ri);
      REQUIRE(hi - lo == 16);
      for (int k = lo; k < hi; ++k) {
        CHECK(s.ray_index[k] == ri);
        CHECK(s.t_start[k] < s.t_end[k]);
        if (k > lo) CHECK(s.t_start[k] > s.t_start[k - 1]);
        const Vec3 mid = rays[ri].at(0.5 * (s.t_start[k] + s.t_end[k]));
        CHECK((s.positions.col(k) - mid).norm() < 1e-9);
      }
      CHECK(s.t_start[lo] >= rays[ri].t_near);
      CHECK(s.t_end[hi - 1] <= rays[ri].t_far + 1e-12);
    }
  }
}

TEST_CASE("clip_to_box") {
  Aabb box;
  Ray r;
  r.origin = Vec3(0, 0, 5);
  r.direction = Vec3(0, 0, -1);
  r.t_far = 100.0;
  const auto c = clip_to_box(r, box);
  REQUIRE(c);
  CHECK(c->t_near == doctest::Approx(4.0));
  CHECK(c->t_far == doctest::Approx(6.0));
  r.origin = Vec3(5, 5, 5);
  CHECK_FALSE(clip_to_box(r, box));
}
