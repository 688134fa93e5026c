#pragma once

#include <cmath>
#include <numbers>
#include <random>

#include "radloc/geometry.hpp"

namespace radloc::test {

inline double deg(double radians) { return radians * 180.0 / std::numbers::pi; }
inline double rad(double degrees) { return degrees * std::numbers::pi / 180.0; }

inline Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Vec3 v(n(rng), n(rng), n(rng));
  return v.normalized();
}

inline Mat3 random_rotation(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> a(0.0, std::numbers::pi);
  return axis_angle(random_unit(rng), a(rng));
}

inline Pose random_pose(std::mt19937_64& rng, double spread = 3.0) {
  std::uniform_real_distribution<double> u(-spread, spread);
  Pose p;
  p.rotation = random_rotation(rng);
  p.translation = Vec3(u(rng), u(rng), u(rng));
  return p;
}

}  // namespace radloc::test
