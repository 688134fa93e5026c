#include "radloc/pnp.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "radloc/errors.hpp"

namespace radloc {

namespace {

constexpr int kBatch = 64;
constexpr double kInf = std::numeric_limits<double>::infinity();

double eval_poly(const std::array<double, 5>& c, double x) {
  return (((c[0] * x + c[1]) * x + c[2]) * x + c[3]) * x + c[4];
}

double eval_deriv(const std::array<double, 5>& c, double x) {
  return ((4.0 * c[0] * x + 3.0 * c[1]) * x + 2.0 * c[2]) * x + c[3];
}

// Real roots of c[0] x^4 + ... + c[4], polished by Newton steps.
std::vector<double> real_roots(const std::array<double, 5>& c) {
  const double scale = std::max({std::abs(c[0]), std::abs(c[1]), std::abs(c[2]), std::abs(c[3]), std::abs(c[4])});
  if (scale == 0.0) return {};
  int lead = 0;
  while (lead < 4 && std::abs(c[lead]) <= 1e-14 * scale) ++lead;
  const int deg = 4 - lead;
  if (deg == 0) return {};
  Eigen::MatrixXd comp = Eigen::MatrixXd::Zero(deg, deg);
  for (int i = 0; i < deg; ++i) comp(0, i) = -c[lead + 1 + i] / c[lead];
  for (int i = 1; i < deg; ++i) comp(i, i - 1) = 1.0;
  Eigen::EigenSolver<Eigen::MatrixXd> es(comp, false);
  std::vector<double> roots;
  for (int i = 0; i < deg; ++i) {
    const auto z = es.eigenvalues()[i];
    if (std::abs(z.imag()) > 1e-6 * std::max(1.0, std::abs(z.real()))) continue;
    double x = z.real();
    for (int it = 0; it < 8; ++it) {
      const double d = eval_deriv(c, x);
      if (d == 0.0) break;
      const double step = eval_poly(c, x) / d;
      x -= step;
      if (std::abs(step) <= 1e-15 * std::max(1.0, std::abs(x))) break;
    }
    roots.push_back(x);
  }
  return roots;
}

// Rigid transform taking camera-frame points q onto world points p.
Pose kabsch(const std::array<Vec3, 3>& q, const std::array<Vec3, 3>& p) {
  const Vec3 qc = (q[0] + q[1] + q[2]) / 3.0;
  const Vec3 pc = (p[0] + p[1] + p[2]) / 3.0;
  Mat3 h = Mat3::Zero();
  for (int i = 0; i < 3; ++i) h += (q[i] - qc) * (p[i] - pc).transpose();
  Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  d(2, 2) = (svd.matrixV() * svd.matrixU().transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  Pose pose;
  pose.rotation = svd.matrixV() * d * svd.matrixU().transpose();
  pose.translation = pc - pose.rotation * qc;
  return pose;
}

struct Hypothesis {
  bool valid = false;
  Pose pose;
  int inliers = 0;
};

int count_inliers(const Pose& pose, const Intrinsics& k, std::span<const Vec3> points, std::span<const Vec2> pixels,
                  double threshold) {
  int n = 0;
  for (std::size_t i = 0; i < points.size(); ++i)
    if (reprojection_error(pose, k, points[i], pixels[i]) <= threshold) ++n;
  return n;
}

std::vector<int> inlier_set(const Pose& pose, const Intrinsics& k, std::span<const Vec3> points,
                            std::span<const Vec2> pixels, double threshold) {
  std::vector<int> out;
  for (std::size_t i = 0; i < points.size(); ++i)
    if (reprojection_error(pose, k, points[i], pixels[i]) <= threshold) out.push_back(static_cast<int>(i));
  return out;
}

}  // namespace

void RansacConfig::validate() const {
  require(max_iterations >= 1, ErrorCode::kInvalidArgument, "max_iterations must be >= 1");
  require(threshold > 0.0, ErrorCode::kInvalidArgument, "threshold must be > 0");
  require(confidence > 0.0 && confidence < 1.0, ErrorCode::kInvalidArgument, "confidence must be in (0, 1)");
  require(refine_iterations >= 0, ErrorCode::kInvalidArgument, "refine_iterations must be >= 0");
}

double reprojection_error(const Pose& pose, const Intrinsics& k, const Vec3& point, const Vec2& pixel) {
  const auto uv = project(pose, k, point);
  return uv ? (*uv - pixel).norm() : kInf;
}

double mean_reprojection_error(const Pose& pose, const Intrinsics& k, std::span<const Vec3> points,
                               std::span<const Vec2> pixels, std::span<const int> subset) {
  double sum = 0.0;
  if (subset.empty()) {
    if (points.empty()) return 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) sum += reprojection_error(pose, k, points[i], pixels[i]);
    return sum / static_cast<double>(points.size());
  }
  for (int i : subset) sum += reprojection_error(pose, k, points[i], pixels[i]);
  return sum / static_cast<double>(subset.size());
}

std::vector<Pose> solve_p3p(std::span<const Vec3> points, std::span<const Vec2> pixels, const Intrinsics& k) {
  require(points.size() == 3 && pixels.size() == 3, ErrorCode::kInvalidArgument, "P3P needs exactly 3 points");
  const Vec3 &p1 = points[0], &p2 = points[1], &p3 = points[2];
  const double span = std::max({(p2 - p1).norm(), (p3 - p1).norm(), (p3 - p2).norm()});
  require(span > 0.0 && (p2 - p1).cross(p3 - p1).norm() > 1e-9 * span * span, ErrorCode::kDegenerateConfiguration,
          "collinear or coincident points");

  const Vec3 j1 = bearing(k, pixels[0]), j2 = bearing(k, pixels[1]), j3 = bearing(k, pixels[2]);
  const double a2 = (p2 - p3).squaredNorm(), b2 = (p1 - p3).squaredNorm(), c2 = (p1 - p2).squaredNorm();
  const double ca = j2.dot(j3), cb = j1.dot(j3), cg = j1.dot(j2);

  const double q = (a2 - c2) / b2;
  const double ab = a2 / b2, cbb = c2 / b2, acb = (a2 + c2) / b2;
  std::array<double, 5> coef{
      (q - 1.0) * (q - 1.0) - 4.0 * cbb * ca * ca,
      4.0 * (q * (1.0 - q) * cb - (1.0 - acb) * ca * cg + 2.0 * cbb * ca * ca * cb),
      2.0 * (q * q - 1.0 + 2.0 * q * q * cb * cb + 2.0 * (1.0 - cbb) * ca * ca - 4.0 * acb * ca * cb * cg +
             2.0 * (1.0 - ab) * cg * cg),
      4.0 * (-q * (1.0 + q) * cb + 2.0 * ab * cg * cg * cb - (1.0 - acb) * ca * cg),
      (1.0 + q) * (1.0 + q) - 4.0 * ab * cg * cg,
  };

  std::vector<Pose> out;
  for (double v : real_roots(coef)) {
    if (v <= 0.0) continue;
    const double den_s = 1.0 + v * v - 2.0 * v * cb;
    if (den_s <= 0.0) continue;
    const double s1_sq = b2 / den_s;
    const double s1 = std::sqrt(s1_sq);
    std::vector<double> us;
    const double den_u = 2.0 * (cg - v * ca);
    if (std::abs(den_u) > 1e-10) {
      us.push_back((1.0 - v * v + (a2 - c2) / s1_sq) / den_u);
    } else {
      // u^2 - 2u cos(gamma) + 1 - c^2/s1^2 = 0
      const double disc = cg * cg - 1.0 + c2 / s1_sq;
      if (disc < 0.0) continue;
      us.push_back(cg + std::sqrt(disc));
      us.push_back(cg - std::sqrt(disc));
    }
    for (double u : us) {
      if (u <= 0.0) continue;
      const std::array<Vec3, 3> cam{s1 * j1, u * s1 * j2, v * s1 * j3};
      const Pose pose = kabsch(cam, {p1, p2, p3});
      bool ok = true;
      for (int i = 0; i < 3; ++i) ok = ok && project(pose, k, points[i]).has_value();
      if (ok) out.push_back(pose);
    }
  }
  if (out.size() > 4) out.resize(4);
  return out;
}

Pose refine_pose(const Pose& pose, const Intrinsics& k, std::span<const Vec3> points, std::span<const Vec2> pixels,
                 std::span<const int> subset, int iterations) {
  const double start = mean_reprojection_error(pose, k, points, pixels, subset);
  // World-to-camera form: x_c = r x + t.
  Mat3 r = pose.rotation.transpose();
  Vec3 t = -r * pose.translation;
  auto for_each = [&](auto&& fn) {
    if (subset.empty())
      for (std::size_t i = 0; i < points.size(); ++i) fn(static_cast<int>(i));
    else
      for (int i : subset) fn(i);
  };
  for (int it = 0; it < iterations; ++it) {
    Eigen::Matrix<double, 6, 6> jtj = Eigen::Matrix<double, 6, 6>::Zero();
    Eigen::Matrix<double, 6, 1> jtr = Eigen::Matrix<double, 6, 1>::Zero();
    bool behind = false;
    for_each([&](int i) {
      const Vec3 xc = r * points[i] + t;
      const double z = xc.z();
      if (z >= -1e-12) {
        behind = true;
        return;
      }
      const double iz = -1.0 / z;
      const Vec2 res(k.cx + k.fx * xc.x() * iz - pixels[i].x(), k.cy - k.fy * xc.y() * iz - pixels[i].y());
      Eigen::Matrix<double, 2, 3> jp;
      jp << k.fx * iz, 0.0, k.fx * xc.x() / (z * z), 0.0, -k.fy * iz, -k.fy * xc.y() / (z * z);
      Eigen::Matrix<double, 3, 6> jx;
      Mat3 skew;
      skew << 0, -xc.z(), xc.y(), xc.z(), 0, -xc.x(), -xc.y(), xc.x(), 0;
      jx.leftCols<3>() = -skew;
      jx.rightCols<3>() = Mat3::Identity();
      const Eigen::Matrix<double, 2, 6> j = jp * jx;
      jtj += j.transpose() * j;
      jtr += j.transpose() * res;
    });
    if (behind) break;
    jtj.diagonal().array() *= 1.0 + 1e-9;
    const Eigen::Matrix<double, 6, 1> delta = jtj.ldlt().solve(-jtr);
    if (!delta.allFinite()) break;
    const Mat3 dr = exp_so3(delta.head<3>());
    r = orthonormalize(dr * r);
    t = dr * t + delta.tail<3>();
    if (delta.norm() < 1e-14) break;
  }
  Pose refined;
  refined.rotation = r.transpose();
  refined.translation = -refined.rotation * t;
  const double end = mean_reprojection_error(refined, k, points, pixels, subset);
  return end <= start ? refined : pose;
}

PoseEstimate ransac_pnp(std::span<const Vec3> points, std::span<const Vec2> pixels, const Intrinsics& k,
                        const RansacConfig& cfg) {
  cfg.validate();
  require(points.size() == pixels.size(), ErrorCode::kInvalidArgument, "point and pixel counts differ");
  const int n = static_cast<int>(points.size());
  require(n >= 4, ErrorCode::kInvalidArgument, "PnP needs at least 4 correspondences");

  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<int> pick(0, n - 1);
  Hypothesis best;
  int evaluated = 0;
  double needed = cfg.max_iterations;
  std::vector<std::array<int, 4>> draws(kBatch);
  std::vector<Hypothesis> hyps(kBatch);
  while (evaluated < std::min<double>(needed, cfg.max_iterations)) {
    const int batch = std::min(kBatch, cfg.max_iterations - evaluated);
    for (int h = 0; h < batch; ++h) {
      auto& d = draws[static_cast<std::size_t>(h)];
      for (int s = 0; s < 4; ++s) {
        int idx;
        do {
          idx = pick(rng);
        } while (std::find(d.begin(), d.begin() + s, idx) != d.begin() + s);
        d[static_cast<std::size_t>(s)] = idx;
      }
    }
#pragma omp parallel for schedule(dynamic, 4)
    for (int h = 0; h < batch; ++h) {
      const auto& d = draws[static_cast<std::size_t>(h)];
      Hypothesis& out = hyps[static_cast<std::size_t>(h)];
      out = {};
      const std::array<Vec3, 3> p{points[d[0]], points[d[1]], points[d[2]]};
      const std::array<Vec2, 3> u{pixels[d[0]], pixels[d[1]], pixels[d[2]]};
      std::vector<Pose> cands;
      try {
        cands = solve_p3p(p, u, k);
      } catch (const Error&) {
        continue;
      }
      double best_err = kInf;
      for (const Pose& c : cands) {
        const double e = reprojection_error(c, k, points[d[3]], pixels[d[3]]);
        if (e < best_err) {
          best_err = e;
          out.pose = c;
        }
      }
      if (best_err > cfg.threshold) continue;
      out.valid = true;
      out.inliers = count_inliers(out.pose, k, points, pixels, cfg.threshold);
    }
    // Serial reduction: highest count, earliest hypothesis on ties.
    for (int h = 0; h < batch; ++h) {
      const Hypothesis& c = hyps[static_cast<std::size_t>(h)];
      if (c.valid && (!best.valid || c.inliers > best.inliers)) best = c;
    }
    evaluated += batch;
    if (best.valid) {
      const double w = static_cast<double>(best.inliers) / n;
      const double miss = 1.0 - w * w * w;
      needed = miss <= 0.0 ? 0.0 : miss >= 1.0 ? cfg.max_iterations : std::log(1.0 - cfg.confidence) / std::log(miss);
    }
  }
  if (!best.valid || best.inliers < 4)
    fail(ErrorCode::kLocalizationFailure, "no model with at least 4 inliers");

  PoseEstimate est;
  est.iterations = evaluated;
  est.pose = best.pose;
  std::vector<int> inl = inlier_set(est.pose, k, points, pixels, cfg.threshold);
  for (int round = 0; round < 3 && cfg.refine_iterations > 0; ++round) {
    const Pose refined = refine_pose(est.pose, k, points, pixels, inl, cfg.refine_iterations);
    std::vector<int> next = inlier_set(refined, k, points, pixels, cfg.threshold);
    if (next.size() < inl.size()) break;
    est.pose = refined;
    if (next == inl) break;
    inl = std::move(next);
  }
  est.inliers = inlier_set(est.pose, k, points, pixels, cfg.threshold);
  if (est.inliers.size() < 4) fail(ErrorCode::kLocalizationFailure, "fewer than 4 inliers after refinement");
  est.mean_error = mean_reprojection_error(est.pose, k, points, pixels, est.inliers);
  return est;
}

PoseEstimate ransac_pnp(const Correspondences& corrs, const Intrinsics& k, const RansacConfig& cfg) {
  std::vector<Vec3> pts;
  std::vector<Vec2> px;
  pts.reserve(corrs.items.size());
  px.reserve(corrs.items.size());
  for (const auto& c : corrs.items) {
    pts.push_back(c.point);
    px.push_back(pixel_center(c.pixel));
  }
  return ransac_pnp(pts, px, k, cfg);
}

Pose compose_with_initial(const PoseEstimate& relative, const Pose& initial) {
  return compose(initial, relative.pose);
}

}  // namespace radloc
