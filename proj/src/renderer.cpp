#include "radloc/renderer.hpp"

#include <cmath>

#include "radloc/binary_io.hpp"
#include "radloc/errors.hpp"

namespace radloc {

Quadrature quadrature(std::span<const double> sigma, std::span<const double> delta) {
  require(sigma.size() == delta.size(), ErrorCode::kInvalidArgument, "sigma/delta size mismatch");
  const std::size_t n = sigma.size();
  Quadrature q;
  q.weights.resize(n);
  q.transmittance.resize(n + 1);
  double optical = 0.0;
  q.transmittance[0] = 1.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double tau = sigma[k] * delta[k];
    q.weights[k] = q.transmittance[k] * -std::expm1(-tau);
    optical += tau;
    q.transmittance[k + 1] = std::exp(-optical);
  }
  return q;
}

void quadrature_backward(const Quadrature& q, std::span<const double> delta, const Eigen::Matrix3Xd& colors,
                         const Vec3& grad_c, std::span<double> grad_sigma) {
  const int n = static_cast<int>(delta.size());
  double tail = 0.0;  // sum_{j>k} w_j <c_j, g>
  for (int k = n - 1; k >= 0; --k) {
    const double cg = colors.col(k).dot(grad_c);
    grad_sigma[k] = delta[k] * (q.transmittance[k + 1] * cg - tail);
    tail += q.weights[k] * cg;
  }
}

SampleSlice SampleSlice::from_batch(const SampleBatch& batch, int ray) {
  const auto [b, e] = batch.ray_range(ray);
  SampleSlice s;
  s.positions = batch.positions.middleCols(b, e - b);
  s.t_start = batch.t_start.segment(b, e - b);
  s.t_end = batch.t_end.segment(b, e - b);
  return s;
}

RayRender render_ray(const FieldParams& params, const Ray& ray, const SampleSlice& samples,
                     const std::optional<SelectionMask>& selection, bool color) {
  const Eigen::Index n = samples.t_start.size();
  require(n > 0, ErrorCode::kInvalidArgument, "empty sample slice");
  for (Eigen::Index k = 0; k < n; ++k)
    require(samples.t_end[k] > samples.t_start[k] && (k == 0 || samples.t_start[k] >= samples.t_end[k - 1] - 1e-12),
            ErrorCode::kInvalidArgument, "samples must be ordered by t");
  const std::vector<int> dims =
      selection ? selection->indices() : all_feature_dims(params.config);
  if (selection)
    require(selection->dim() == params.config.feature_dim(), ErrorCode::kInvalidArgument,
            "selection dimension does not match the field");
  Eigen::Matrix3Xd dirs(3, n);
  dirs.colwise() = ray.direction;
  const BatchOutput out = eval_batch(params, samples.positions, dirs, {color, dims});

  std::vector<double> sigma(out.sigma.data(), out.sigma.data() + n);
  std::vector<double> delta(static_cast<std::size_t>(n));
  for (Eigen::Index k = 0; k < n; ++k) delta[k] = samples.t_end[k] - samples.t_start[k];
  Quadrature q = quadrature(sigma, delta);

  RayRender r;
  r.feature = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dims.size()));
  for (Eigen::Index k = 0; k < n; ++k) {
    const double w = q.weights[k];
    if (color) r.color += w * out.color.col(k);
    r.feature += w * out.features.col(k);
    r.depth += w * 0.5 * (samples.t_start[k] + samples.t_end[k]);
  }
  // 1 - T stays in [0, 1]; the running sum of weights can round past 1.
  r.acc = 1.0 - q.transmittance[static_cast<std::size_t>(n)];
  r.weights = std::move(q.weights);
  r.transmittance = std::move(q.transmittance);
  return r;
}

namespace {

RenderedMap empty_map(const FieldParams& params, const Pose& pose, const Intrinsics& k, const RenderOptions& opt) {
  k.validate();
  require(opt.stride >= 1, ErrorCode::kInvalidArgument, "stride must be >= 1");
  require(opt.chunk_rays >= 1, ErrorCode::kInvalidArgument, "chunk size must be >= 1");
  if (opt.selection)
    require(opt.selection->dim() == params.config.feature_dim(), ErrorCode::kInvalidArgument,
            "selection dimension does not match the field");
  RenderedMap m;
  m.stride = opt.stride;
  m.grid_width = (k.width + opt.stride - 1) / opt.stride;
  m.grid_height = (k.height + opt.stride - 1) / opt.stride;
  m.pose = pose;
  m.intrinsics = k;
  if (opt.features)
    m.feature_dims = opt.selection ? opt.selection->indices() : all_feature_dims(params.config);
  const int n = m.size();
  m.color = Eigen::Matrix3Xd::Zero(3, n);
  m.features = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m.feature_dims.size()), n);
  m.depth = Eigen::VectorXd::Zero(n);
  m.acc = Eigen::VectorXd::Zero(n);
  return m;
}

void render_chunk(const FieldParams& params, const RenderOptions& opt, int first, int last, RenderedMap& m) {
  std::vector<PixelIndex> pixels;
  pixels.reserve(static_cast<std::size_t>(last - first));
  for (int i = first; i < last; ++i) pixels.push_back(m.pixel(i));
  const auto rays = generate_rays(m.pose, m.intrinsics, pixels);

  std::vector<Ray> clipped;
  std::vector<int> target;
  for (std::size_t r = 0; r < rays.size(); ++r) {
    if (auto c = clip_to_box(rays[r], params.bounds)) {
      clipped.push_back(*c);
      target.push_back(first + static_cast<int>(r));
    }
  }
  if (clipped.empty()) return;

  const SampleBatch batch = stratified_samples(clipped, opt.samples_per_ray, 0, false);
  Eigen::Matrix3Xd dirs(3, batch.size());
  for (int s = 0; s < batch.size(); ++s) dirs.col(s) = clipped[batch.ray_index[s]].direction;
  const BatchOutput out = eval_batch(params, batch.positions, dirs, {opt.color, m.feature_dims});

  const int n = opt.samples_per_ray;
  std::vector<double> sigma(n), delta(n);
  for (std::size_t r = 0; r < clipped.size(); ++r) {
    const int base = batch.ray_offset[r];
    for (int k = 0; k < n; ++k) {
      sigma[k] = out.sigma[base + k];
      delta[k] = batch.t_end[base + k] - batch.t_start[base + k];
    }
    const Quadrature q = quadrature(sigma, delta);
    const int px = target[r];
    double depth = 0.0;
    for (int k = 0; k < n; ++k) {
      const double w = q.weights[k];
      depth += w * 0.5 * (batch.t_start[base + k] + batch.t_end[base + k]);
      if (opt.color) m.color.col(px) += w * out.color.col(base + k);
      if (!m.feature_dims.empty()) m.features.col(px) += w * out.features.col(base + k);
    }
    m.acc[px] = 1.0 - q.transmittance[static_cast<std::size_t>(n)];
    m.depth[px] = depth;
  }
}

}  // namespace

RenderedMap render_map(const FieldParams& params, const Pose& pose, const Intrinsics& k, const RenderOptions& opt) {
  RenderedMap m = empty_map(params, pose, k, opt);
  const int n = m.size();
  const int chunks = (n + opt.chunk_rays - 1) / opt.chunk_rays;
  // Exceptions must not escape the parallel region.
  std::exception_ptr error;
#pragma omp parallel for schedule(dynamic, 1)
  for (int c = 0; c < chunks; ++c) {
    try {
      render_chunk(params, opt, c * opt.chunk_rays, std::min(n, (c + 1) * opt.chunk_rays), m);
    } catch (...) {
#pragma omp critical
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
  return m;
}

RenderedMap render_map_serial(const FieldParams& params, const Pose& pose, const Intrinsics& k,
                              const RenderOptions& opt) {
  RenderedMap m = empty_map(params, pose, k, opt);
  const int n = m.size();
  for (int first = 0; first < n; first += opt.chunk_rays)
    render_chunk(params, opt, first, std::min(n, first + opt.chunk_rays), m);
  return m;
}

LiftedCloud lift_to_3d(const RenderedMap& map, double opacity_threshold) {
  std::vector<int> keep;
  for (int i = 0; i < map.size(); ++i)
    if (map.acc[i] > opacity_threshold) keep.push_back(i);
  LiftedCloud cloud;
  cloud.points.resize(3, static_cast<Eigen::Index>(keep.size()));
  cloud.features.resize(map.features.rows(), static_cast<Eigen::Index>(keep.size()));
  cloud.grid_index = keep;
  for (std::size_t j = 0; j < keep.size(); ++j) {
    const int i = keep[j];
    const Vec3 dir = (map.pose.rotation * bearing(map.intrinsics, pixel_center(map.pixel(i)))).normalized();
    cloud.points.col(static_cast<Eigen::Index>(j)) = map.pose.translation + map.depth[i] * dir;
    cloud.features.col(static_cast<Eigen::Index>(j)) = map.features.col(i);
  }
  return cloud;
}

std::vector<std::uint8_t> encode_rendered_map(const RenderedMap& map) {
  std::vector<std::uint8_t> out;
  const auto d = static_cast<std::uint32_t>(map.features.rows());
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(map.grid_width));
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(map.grid_height));
  io::put<std::uint32_t>(out, d);
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(map.stride));
  out.reserve(out.size() + static_cast<std::size_t>(map.size()) * (5 + d) * 4);
  for (int i = 0; i < map.size(); ++i) {
    for (int c = 0; c < 3; ++c) io::put<float>(out, static_cast<float>(map.color(c, i)));
    io::put<float>(out, static_cast<float>(map.depth[i]));
    io::put<float>(out, static_cast<float>(map.acc[i]));
    for (std::uint32_t f = 0; f < d; ++f) io::put<float>(out, static_cast<float>(map.features(f, i)));
  }
  return out;
}

RenderedMap decode_rendered_map(std::span<const std::uint8_t> bytes) {
  io::Reader rd(bytes);
  RenderedMap m;
  m.grid_width = static_cast<int>(rd.get<std::uint32_t>());
  m.grid_height = static_cast<int>(rd.get<std::uint32_t>());
  const auto d = rd.get<std::uint32_t>();
  m.stride = static_cast<int>(rd.get<std::uint32_t>());
  const int n = m.size();
  require(rd.remaining() == static_cast<std::size_t>(n) * (5 + d) * 4, ErrorCode::kIo,
          "rendered map payload size mismatch");
  m.color.resize(3, n);
  m.depth.resize(n);
  m.acc.resize(n);
  m.features.resize(d, n);
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < 3; ++c) m.color(c, i) = rd.get<float>();
    m.depth[i] = rd.get<float>();
    m.acc[i] = rd.get<float>();
    for (std::uint32_t f = 0; f < d; ++f) m.features(f, i) = rd.get<float>();
  }
  return m;
}

void save_rendered_map(const std::filesystem::path& path, const RenderedMap& map) {
  io::write_file(path, encode_rendered_map(map));
}

RenderedMap load_rendered_map(const std::filesystem::path& path) { return decode_rendered_map(io::read_file(path)); }

}  // namespace radloc
