#include "radloc/synthscene.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "radloc/binary_io.hpp"
#include "radloc/errors.hpp"

namespace radloc {

namespace {

constexpr double kPi = std::numbers::pi;

double deg(double d) { return d * kPi / 180.0; }

std::pair<Vec3, Vec3> plane_basis(const Vec3& n) {
  const Vec3 seed = std::abs(n.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
  const Vec3 u = n.cross(seed).normalized();
  return {u, n.cross(u)};
}

double hit_plane(const Plane& p, const Ray& ray) {
  const Vec3 n = p.normal.normalized();
  const double denom = n.dot(ray.direction);
  if (std::abs(denom) < 1e-14) return -1.0;
  const double t = n.dot(p.point - ray.origin) / denom;
  if (std::isfinite(p.half_extent)) {
    const Vec3 off = ray.at(t) - p.point;
    const auto [u, v] = plane_basis(n);
    if (std::abs(off.dot(u)) > p.half_extent || std::abs(off.dot(v)) > p.half_extent) return -1.0;
  }
  return t;
}

double hit_sphere(const Sphere& s, const Ray& ray) {
  const Vec3 oc = ray.origin - s.center;
  const double b = oc.dot(ray.direction);
  const double c = oc.squaredNorm() - s.radius * s.radius;
  const double disc = b * b - c;
  if (disc < 0.0) return -1.0;
  const double sq = std::sqrt(disc);
  const double t0 = -b - sq;
  if (t0 >= ray.t_near) return t0;
  return -b + sq;
}

double hit_box(const Box& b, const Ray& ray) {
  Ray r = ray;
  r.t_near = 0.0;
  r.t_far = std::numeric_limits<double>::infinity();
  auto clipped = clip_to_box(r, b.box);
  if (!clipped) return -1.0;
  return clipped->t_near > ray.t_near ? clipped->t_near : clipped->t_far;
}

}  // namespace

Vec3 Texture::evaluate(const Vec3& p) const {
  if (kind == Kind::kConstant) return color;
  const Vec3 q = ((p - ramp_box.lo).array() / ramp_box.size().array()).matrix();
  const double r = 0.15 + 0.7 * std::clamp(q.x(), 0.0, 1.0);
  const double g = 0.15 + 0.7 * std::clamp(q.y(), 0.0, 1.0);
  const double b = 0.5 + 0.3 * std::sin(kPi * p.x() / checker_cell) * std::sin(kPi * p.y() / checker_cell);
  return {r, g, b};
}

void SyntheticScene::validate() const {
  require((bounds.hi.array() > bounds.lo.array()).all(), ErrorCode::kInvalidArgument,
          "scene bounds must have positive size");
  for (const auto& prim : primitives) {
    std::visit(
        [&](const auto& p) {
          using T = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<T, Sphere>) {
            require(bounds.contains(p.center, 0.0) &&
                        (p.center.array() - p.radius >= bounds.lo.array() - 1e-12).all() &&
                        (p.center.array() + p.radius <= bounds.hi.array() + 1e-12).all(),
                    ErrorCode::kInvalidArgument, "sphere outside scene bounds");
          } else if constexpr (std::is_same_v<T, Box>) {
            require(bounds.contains(p.box.lo, 1e-12) && bounds.contains(p.box.hi, 1e-12),
                    ErrorCode::kInvalidArgument, "box outside scene bounds");
          } else {
            require(bounds.contains(p.point, 1e-12), ErrorCode::kInvalidArgument,
                    "plane anchor outside scene bounds");
          }
        },
        prim);
  }
}

SyntheticScene make_reference_scene() {
  SyntheticScene s;
  s.bounds.lo = Vec3(-10.0, -10.0, -1.0);
  s.bounds.hi = Vec3(10.0, 10.0, 3.0);
  Aabb ground_box;
  ground_box.lo = Vec3(-10.0, -10.0, 0.0);
  ground_box.hi = Vec3(10.0, 10.0, 1.0);
  s.primitives.push_back(Plane{Vec3::Zero(), Vec3::UnitZ(), 10.0, Texture::ramp_checker(ground_box, 2.5)});
  s.primitives.push_back(Sphere{Vec3(-3.0, 2.0, 1.0), 1.0, Texture::constant(Vec3(0.9, 0.25, 0.2))});
  s.primitives.push_back(Sphere{Vec3(3.0, -2.0, 0.8), 0.8, Texture::constant(Vec3(0.2, 0.35, 0.9))});
  s.primitives.push_back(Sphere{Vec3(2.0, 4.0, 1.2), 1.2, Texture::constant(Vec3(0.95, 0.85, 0.25))});
  s.validate();
  return s;
}

Hit intersect(const SyntheticScene& scene, const Ray& ray) {
  Hit best;
  for (const auto& prim : scene.primitives) {
    std::visit(
        [&](const auto& p) {
          using T = std::decay_t<decltype(p)>;
          double t;
          if constexpr (std::is_same_v<T, Plane>) t = hit_plane(p, ray);
          else if constexpr (std::is_same_v<T, Sphere>) t = hit_sphere(p, ray);
          else t = hit_box(p, ray);
          if (t >= ray.t_near && t <= ray.t_far && t < best.t) {
            best.t = t;
            best.color = scene.ambient * p.texture.evaluate(ray.at(t));
          }
        },
        prim);
  }
  return best;
}

PosedImage raytrace(const SyntheticScene& scene, const Pose& pose, const Intrinsics& k) {
  PosedImage out;
  out.pose = pose;
  out.intrinsics = k;
  out.image = RgbImage(k.width, k.height);
  out.depth.assign(static_cast<std::size_t>(k.pixel_count()), std::numeric_limits<double>::infinity());
  const auto rays = generate_rays(pose, k, {}, 0.0, std::numeric_limits<double>::infinity());
#pragma omp parallel for schedule(static)
  for (int i = 0; i < static_cast<int>(rays.size()); ++i) {
    const Hit h = intersect(scene, rays[i]);
    if (!h.hit()) continue;
    out.depth[i] = h.t;
    double* px = out.image.data.data() + static_cast<std::size_t>(i) * 3;
    for (int c = 0; c < 3; ++c) px[c] = std::clamp(h.color[c], 0.0, 1.0);
  }
  return out;
}

Trajectory make_trajectory(const SyntheticScene& scene, const TrajectoryLayout& layout, int count,
                           std::uint64_t seed) {
  require(count >= 1, ErrorCode::kInvalidArgument, "trajectory needs at least one pose");
  Trajectory traj;
  const Vec3 center = scene.bounds.center();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> sym(-1.0, 1.0);

  switch (layout.kind) {
    case LayoutKind::kRing: {
      for (int i = 0; i < count; ++i) {
        const double a = 2.0 * kPi * i / count;
        const Vec3 eye = center + Vec3(layout.site_radius * std::cos(a), layout.site_radius * std::sin(a),
                                       layout.height - center.z());
        traj.poses.push_back(look_at(eye, center));
      }
      break;
    }
    case LayoutKind::kGrid: {
      const int side = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(count))));
      for (int i = 0; i < count; ++i) {
        const int gx = i % side;
        const int gy = i / side;
        const double fx = side > 1 ? -1.0 + 2.0 * gx / (side - 1) : 0.0;
        const double fy = side > 1 ? -1.0 + 2.0 * gy / (side - 1) : 0.0;
        const Vec3 eye(center.x() + fx * layout.site_radius, center.y() + fy * layout.site_radius,
                       layout.height);
        traj.poses.push_back(look_at(eye, Vec3(eye.x(), eye.y(), center.z() - 1.0), Vec3::UnitY()));
      }
      break;
    }
    case LayoutKind::kMultiSite: {
      require(layout.sites >= 1 && layout.headings >= 1, ErrorCode::kInvalidArgument,
              "multi-site layout needs sites and headings");
      const int groups = layout.sites * layout.headings;
      for (int i = 0; i < count; ++i) {
        const int g = i % groups;
        const int site = g / layout.headings;
        const int heading = g % layout.headings;
        const double phi = deg(45.0) + 2.0 * kPi * site / layout.sites;
        const double spread =
            layout.headings > 1 ? -layout.heading_spread_deg + 2.0 * layout.heading_spread_deg * heading /
                                                                   (layout.headings - 1)
                                : 0.0;
        double yaw = phi + kPi + deg(spread);
        double pitch = deg(layout.pitch_deg);
        Vec3 eye(center.x() + layout.site_radius * std::cos(phi), center.y() + layout.site_radius * std::sin(phi),
                 layout.height);
        eye += layout.position_jitter * Vec3(sym(rng), sym(rng), 0.5 * sym(rng));
        yaw += deg(layout.angle_jitter_deg) * sym(rng);
        pitch += deg(layout.angle_jitter_deg) * 0.6 * sym(rng);
        const Vec3 dir(std::cos(yaw) * std::cos(pitch), std::sin(yaw) * std::cos(pitch), -std::sin(pitch));
        traj.poses.push_back(look_at(eye, eye + dir));
        traj.labels.push_back(g);
      }
      break;
    }
  }
  return traj;
}

void save_trajectory(const std::filesystem::path& path, const std::vector<Pose>& poses) {
  std::vector<std::uint8_t> bytes;
  bytes.reserve(poses.size() * 96);
  for (const auto& p : poses) append_pose_bytes(p, bytes);
  io::write_file(path, bytes);
}

std::vector<Pose> load_trajectory(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  require(bytes.size() % 96 == 0, ErrorCode::kIo, "trajectory size is not a multiple of 96 bytes");
  std::vector<Pose> poses;
  for (std::size_t off = 0; off < bytes.size(); off += 96)
    poses.push_back(pose_from_bytes(std::span(bytes).subspan(off, 96)));
  return poses;
}

void save_posed_image(const std::filesystem::path& ppm_path, const PosedImage& img) {
  std::ostringstream header;
  header << "P6\n" << img.image.width << " " << img.image.height << "\n255\n";
  std::vector<std::uint8_t> bytes;
  io::put_bytes(bytes, header.str());
  for (double v : img.image.data)
    bytes.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  io::write_file(ppm_path, bytes);

  std::vector<std::uint8_t> depth;
  depth.reserve(img.depth.size() * 4);
  for (double d : img.depth) io::put<float>(depth, static_cast<float>(d));
  auto depth_path = ppm_path;
  depth_path.replace_extension(".depth");
  io::write_file(depth_path, depth);
}

RgbImage load_ppm(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  std::string head(bytes.begin(), bytes.begin() + std::min<std::size_t>(bytes.size(), 64));
  std::istringstream in(head);
  std::string magic;
  int w = 0, h = 0, maxv = 0;
  in >> magic >> w >> h >> maxv;
  require(magic == "P6" && w > 0 && h > 0 && maxv == 255, ErrorCode::kIo, "unsupported PPM header");
  const auto offset = static_cast<std::size_t>(in.tellg()) + 1;
  require(bytes.size() >= offset + static_cast<std::size_t>(w) * h * 3, ErrorCode::kIo, "truncated PPM");
  RgbImage img(w, h);
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = bytes[offset + i] / 255.0;
  return img;
}

}  // namespace radloc
