#include "radloc/field.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "radloc/binary_io.hpp"
#include "radloc/errors.hpp"

namespace radloc {

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

using ConstMap = Eigen::Map<const Eigen::MatrixXd>;
using Map = Eigen::Map<Eigen::MatrixXd>;

ConstMap view(const Eigen::VectorXd& theta, const FieldLayout::Block& b) {
  return ConstMap(theta.data() + b.offset, b.rows, b.cols);
}

Map view(Eigen::VectorXd& theta, const FieldLayout::Block& b) {
  return Map(theta.data() + b.offset, b.rows, b.cols);
}

Eigen::MatrixXd encode_columns(const Eigen::Matrix3Xd& x, const std::array<int, 3>& octaves) {
  const int dim = 2 * (octaves[0] + octaves[1] + octaves[2]);
  Eigen::MatrixXd out(dim, x.cols());
  int row = 0;
  for (int axis = 0; axis < 3; ++axis) {
    for (int k = 0; k < octaves[axis]; ++k) {
      const double freq = std::ldexp(std::numbers::pi, k);
      for (Eigen::Index j = 0; j < x.cols(); ++j) {
        const double a = freq * x(axis, j);
        out(row, j) = std::sin(a);
        out(row + 1, j) = std::cos(a);
      }
      row += 2;
    }
  }
  return out;
}

Eigen::Matrix3Xd normalize_positions(const FieldParams& params, const Eigen::Matrix3Xd& positions) {
  const Aabb& b = params.bounds;
  Eigen::Matrix3Xd n(3, positions.cols());
  for (Eigen::Index j = 0; j < positions.cols(); ++j) n.col(j) = b.normalize(positions.col(j));
  if (n.cols() > 0 && n.cwiseAbs().maxCoeff() > 1.5)
    fail(ErrorCode::kSceneBounds, "sample position outside the scene bounds");
  return n;
}

void check_params(const FieldParams& params) {
  if (!params.all_finite()) fail(ErrorCode::kCorruptCheckpoint, "non-finite field parameter");
  require(params.size() == FieldLayout(params.config).total, ErrorCode::kCorruptCheckpoint,
          "parameter count does not match architecture");
}

Eigen::MatrixXd relu(const Eigen::MatrixXd& m) { return m.cwiseMax(0.0); }

void fill_uniform(Map m, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = u(rng);
}

}  // namespace

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void FieldConfig::validate() const {
  for (int o : pos_octaves) require(o >= 0, ErrorCode::kInvalidArgument, "negative octave count");
  require(pos_dim() > 0, ErrorCode::kInvalidArgument, "positional encoding is empty");
  require(dir_octaves >= 0 && trunk_width > 0 && trunk_depth >= 1 && mlp_dim > 0 && color_hidden > 0,
          ErrorCode::kInvalidArgument, "invalid field architecture");
}

FieldLayout::FieldLayout(const FieldConfig& cfg) {
  cfg.validate();
  int off = 0;
  auto block = [&](int rows, int cols) {
    Block b{rows, cols, off};
    off += rows * cols;
    return b;
  };
  int in = cfg.pos_dim();
  for (int i = 0; i < cfg.trunk_depth; ++i) {
    trunk_w.push_back(block(cfg.trunk_width, in));
    trunk_b.push_back(block(cfg.trunk_width, 1));
    in = cfg.trunk_width;
  }
  bottleneck_w = block(cfg.mlp_dim, cfg.trunk_width);
  bottleneck_b = block(cfg.mlp_dim, 1);
  density_w = block(1, cfg.trunk_width);
  density_b = block(1, 1);
  color1_w = block(cfg.color_hidden, cfg.mlp_dim + cfg.dir_dim());
  color1_b = block(cfg.color_hidden, 1);
  color2_w = block(3, cfg.color_hidden);
  color2_b = block(3, 1);
  total = off;
}

FieldParams init_field(const FieldConfig& cfg, const Aabb& bounds, std::uint64_t seed) {
  const FieldLayout lay(cfg);
  FieldParams p{cfg, bounds, Eigen::VectorXd::Zero(lay.total)};
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < lay.trunk_w.size(); ++i)
    fill_uniform(view(p.theta, lay.trunk_w[i]), std::sqrt(6.0 / lay.trunk_w[i].cols), rng);
  fill_uniform(view(p.theta, lay.bottleneck_w),
               std::sqrt(6.0 / (lay.bottleneck_w.cols + lay.bottleneck_w.rows)), rng);
  fill_uniform(view(p.theta, lay.density_w), std::sqrt(6.0 / (lay.density_w.cols + 1)), rng);
  fill_uniform(view(p.theta, lay.color1_w), std::sqrt(6.0 / lay.color1_w.cols), rng);
  fill_uniform(view(p.theta, lay.color2_w), std::sqrt(6.0 / (lay.color2_w.cols + 3)), rng);
  return p;
}

Eigen::VectorXd positional_encode(const Vec3& x, int octaves) {
  return positional_encode(x, std::array<int, 3>{octaves, octaves, octaves});
}

Eigen::VectorXd positional_encode(const Vec3& x, const std::array<int, 3>& octaves) {
  if (!x.allFinite() || x.cwiseAbs().maxCoeff() > 1.5)
    fail(ErrorCode::kSceneBounds, "normalized coordinate outside [-1.5, 1.5]");
  Eigen::Matrix3Xd col(3, 1);
  col.col(0) = x;
  return encode_columns(col, octaves).col(0);
}

std::vector<int> all_feature_dims(const FieldConfig& cfg) {
  std::vector<int> dims(cfg.feature_dim());
  for (int i = 0; i < cfg.feature_dim(); ++i) dims[i] = i;
  return dims;
}

FieldTape forward_tape(const FieldParams& params, const Eigen::Matrix3Xd& positions,
                       const Eigen::Matrix3Xd& dirs) {
  check_params(params);
  const FieldConfig& cfg = params.config;
  const FieldLayout lay(cfg);
  const auto& th = params.theta;
  FieldTape t;
  t.pos_enc = encode_columns(normalize_positions(params, positions), cfg.pos_octaves);
  const Eigen::MatrixXd* in = &t.pos_enc;
  t.trunk.reserve(cfg.trunk_depth);
  for (int i = 0; i < cfg.trunk_depth; ++i) {
    Eigen::MatrixXd a = view(th, lay.trunk_w[i]) * (*in);
    a.colwise() += view(th, lay.trunk_b[i]).col(0);
    t.trunk.push_back(relu(a));
    in = &t.trunk.back();
  }
  const Eigen::MatrixXd& h = t.trunk.back();
  t.f_mlp = view(th, lay.bottleneck_w) * h;
  t.f_mlp.colwise() += view(th, lay.bottleneck_b).col(0);
  t.density_pre = view(th, lay.density_w) * h;
  t.density_pre.array() += th[lay.density_b.offset];
  t.sigma = t.density_pre.unaryExpr([](double v) { return softplus(v); });

  const int dd = cfg.dir_dim();
  t.color_in.resize(cfg.mlp_dim + dd, h.cols());
  t.color_in.topRows(cfg.mlp_dim) = t.f_mlp;
  if (dd > 0) {
    const std::array<int, 3> oct{cfg.dir_octaves, cfg.dir_octaves, cfg.dir_octaves};
    t.color_in.bottomRows(dd) = encode_columns(dirs, oct);
  }
  Eigen::MatrixXd ca = view(th, lay.color1_w) * t.color_in;
  ca.colwise() += view(th, lay.color1_b).col(0);
  t.color_hidden = relu(ca);
  Eigen::MatrixXd co = view(th, lay.color2_w) * t.color_hidden;
  co.colwise() += view(th, lay.color2_b).col(0);
  t.color = co.unaryExpr([](double v) { return sigmoid(v); });
  return t;
}

Eigen::VectorXd backward(const FieldParams& params, const FieldTape& t, const Eigen::RowVectorXd& grad_sigma,
                         const Eigen::Matrix3Xd& grad_color) {
  const FieldConfig& cfg = params.config;
  const FieldLayout lay(cfg);
  const auto& th = params.theta;
  Eigen::VectorXd g = Eigen::VectorXd::Zero(params.size());

  // Color head.
  const Eigen::MatrixXd g_co = grad_color.cwiseProduct(t.color.cwiseProduct((1.0 - t.color.array()).matrix()));
  view(g, lay.color2_w) = g_co * t.color_hidden.transpose();
  view(g, lay.color2_b) = g_co.rowwise().sum();
  Eigen::MatrixXd g_ca = view(th, lay.color2_w).transpose() * g_co;
  g_ca = g_ca.cwiseProduct((t.color_hidden.array() > 0.0).cast<double>().matrix());
  view(g, lay.color1_w) = g_ca * t.color_in.transpose();
  view(g, lay.color1_b) = g_ca.rowwise().sum();
  const Eigen::MatrixXd g_f = (view(th, lay.color1_w).transpose() * g_ca).topRows(cfg.mlp_dim);

  // Density head.
  const Eigen::RowVectorXd g_d =
      grad_sigma.cwiseProduct(t.density_pre.unaryExpr([](double v) { return sigmoid(v); }));
  const Eigen::MatrixXd& h = t.trunk.back();
  view(g, lay.density_w) = g_d * h.transpose();
  g[lay.density_b.offset] = g_d.sum();

  // Bottleneck and trunk.
  view(g, lay.bottleneck_w) = g_f * h.transpose();
  view(g, lay.bottleneck_b) = g_f.rowwise().sum();
  Eigen::MatrixXd g_h = view(th, lay.bottleneck_w).transpose() * g_f;
  g_h.noalias() += view(th, lay.density_w).transpose() * g_d;
  for (int i = cfg.trunk_depth - 1; i >= 0; --i) {
    const Eigen::MatrixXd g_a = g_h.cwiseProduct((t.trunk[i].array() > 0.0).cast<double>().matrix());
    const Eigen::MatrixXd& prev = i == 0 ? t.pos_enc : t.trunk[i - 1];
    view(g, lay.trunk_w[i]) = g_a * prev.transpose();
    view(g, lay.trunk_b[i]) = g_a.rowwise().sum();
    if (i > 0) g_h = view(th, lay.trunk_w[i]).transpose() * g_a;
  }
  return g;
}

BatchOutput eval_batch(const FieldParams& params, const Eigen::Matrix3Xd& positions, const Eigen::Matrix3Xd& dirs,
                       const BatchRequest& request) {
  check_params(params);
  const FieldConfig& cfg = params.config;
  const FieldLayout lay(cfg);
  const auto& th = params.theta;
  const Eigen::Index n = positions.cols();
  const Eigen::MatrixXd enc = encode_columns(normalize_positions(params, positions), cfg.pos_octaves);

  Eigen::MatrixXd h = enc;
  for (int i = 0; i < cfg.trunk_depth; ++i) {
    Eigen::MatrixXd a = view(th, lay.trunk_w[i]) * h;
    a.colwise() += view(th, lay.trunk_b[i]).col(0);
    h = relu(a);
  }
  BatchOutput out;
  out.sigma = view(th, lay.density_w) * h;
  out.sigma = out.sigma.unaryExpr([b = th[lay.density_b.offset]](double v) { return softplus(v + b); });

  const int pos_dim = cfg.pos_dim();
  const auto bw = view(th, lay.bottleneck_w);
  const auto bb = view(th, lay.bottleneck_b);

  Eigen::MatrixXd f_mlp;
  if (request.color) {
    f_mlp = bw * h;
    f_mlp.colwise() += bb.col(0);
  }

  out.features.resize(static_cast<Eigen::Index>(request.feature_dims.size()), n);
  std::vector<int> mlp_rows;
  std::vector<int> mlp_dst;
  for (std::size_t r = 0; r < request.feature_dims.size(); ++r) {
    const int d = request.feature_dims[r];
    require(d >= 0 && d < cfg.feature_dim(), ErrorCode::kInvalidArgument, "feature dimension out of range");
    if (d < pos_dim) {
      out.features.row(static_cast<Eigen::Index>(r)) = enc.row(d);
    } else if (request.color) {
      out.features.row(static_cast<Eigen::Index>(r)) = f_mlp.row(d - pos_dim);
    } else {
      mlp_rows.push_back(d - pos_dim);
      mlp_dst.push_back(static_cast<int>(r));
    }
  }
  if (!mlp_rows.empty()) {
    // Only the selected bottleneck rows are evaluated.
    Eigen::MatrixXd w_sel(static_cast<Eigen::Index>(mlp_rows.size()), bw.cols());
    for (std::size_t i = 0; i < mlp_rows.size(); ++i) w_sel.row(static_cast<Eigen::Index>(i)) = bw.row(mlp_rows[i]);
    const Eigen::MatrixXd sel = w_sel * h;
    for (std::size_t i = 0; i < mlp_rows.size(); ++i)
      out.features.row(mlp_dst[i]) = sel.row(static_cast<Eigen::Index>(i)).array() + bb(mlp_rows[i], 0);
  }

  if (request.color) {
    const int dd = cfg.dir_dim();
    Eigen::MatrixXd cin(cfg.mlp_dim + dd, n);
    cin.topRows(cfg.mlp_dim) = f_mlp;
    if (dd > 0) {
      const std::array<int, 3> oct{cfg.dir_octaves, cfg.dir_octaves, cfg.dir_octaves};
      cin.bottomRows(dd) = encode_columns(dirs, oct);
    }
    Eigen::MatrixXd ca = view(th, lay.color1_w) * cin;
    ca.colwise() += view(th, lay.color1_b).col(0);
    Eigen::MatrixXd co = view(th, lay.color2_w) * relu(ca);
    co.colwise() += view(th, lay.color2_b).col(0);
    out.color = co.unaryExpr([](double v) { return sigmoid(v); });
  }
  return out;
}

PointEval eval_point(const FieldParams& params, const Vec3& x, const Vec3& view_dir) {
  require(std::abs(view_dir.norm() - 1.0) < 1e-6, ErrorCode::kInvalidArgument, "view direction must be unit");
  Eigen::Matrix3Xd pos(3, 1), dir(3, 1);
  pos.col(0) = x;
  dir.col(0) = view_dir;
  const auto dims = all_feature_dims(params.config);
  const BatchOutput out = eval_batch(params, pos, dir, {true, dims});
  PointEval e;
  e.sigma = out.sigma[0];
  e.color = out.color.col(0);
  const int pd = params.config.pos_dim();
  e.f_pos = out.features.col(0).head(pd);
  e.f_mlp = out.features.col(0).tail(params.config.mlp_dim);
  return e;
}

std::vector<std::uint8_t> encode_checkpoint(const FieldParams& params) {
  std::vector<std::uint8_t> out;
  io::put_bytes(out, "MLNF");
  io::put<std::uint32_t>(out, kCheckpointVersion);
  const auto& c = params.config;
  for (int o : c.pos_octaves) io::put<std::uint32_t>(out, static_cast<std::uint32_t>(o));
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(c.dir_octaves));
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(c.trunk_width));
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(c.trunk_depth));
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(c.mlp_dim));
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(c.color_hidden));
  for (int i = 0; i < 3; ++i) io::put<double>(out, params.bounds.lo[i]);
  for (int i = 0; i < 3; ++i) io::put<double>(out, params.bounds.hi[i]);
  io::put<std::uint64_t>(out, static_cast<std::uint64_t>(params.theta.size()));
  for (Eigen::Index i = 0; i < params.theta.size(); ++i) io::put<double>(out, params.theta[i]);
  return out;
}

FieldParams decode_checkpoint(std::span<const std::uint8_t> bytes) {
  io::Reader rd(bytes);
  try {
    if (rd.get_string(4) != "MLNF") fail(ErrorCode::kCorruptCheckpoint, "bad magic");
    const auto version = rd.get<std::uint32_t>();
    if (version != kCheckpointVersion)
      fail(ErrorCode::kCorruptCheckpoint, "unsupported version " + std::to_string(version));
    FieldParams p;
    for (int& o : p.config.pos_octaves) o = static_cast<int>(rd.get<std::uint32_t>());
    p.config.dir_octaves = static_cast<int>(rd.get<std::uint32_t>());
    p.config.trunk_width = static_cast<int>(rd.get<std::uint32_t>());
    p.config.trunk_depth = static_cast<int>(rd.get<std::uint32_t>());
    p.config.mlp_dim = static_cast<int>(rd.get<std::uint32_t>());
    p.config.color_hidden = static_cast<int>(rd.get<std::uint32_t>());
    for (int i = 0; i < 3; ++i) p.bounds.lo[i] = rd.get<double>();
    for (int i = 0; i < 3; ++i) p.bounds.hi[i] = rd.get<double>();
    const auto n = rd.get<std::uint64_t>();
    const FieldLayout lay(p.config);
    if (n != static_cast<std::uint64_t>(lay.total))
      fail(ErrorCode::kCorruptCheckpoint, "parameter count does not match architecture");
    p.theta.resize(static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < p.theta.size(); ++i) p.theta[i] = rd.get<double>();
    if (!rd.done()) fail(ErrorCode::kCorruptCheckpoint, "trailing bytes");
    if (!p.all_finite()) fail(ErrorCode::kCorruptCheckpoint, "non-finite parameter");
    return p;
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kCorruptCheckpoint) throw;
    fail(ErrorCode::kCorruptCheckpoint, e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const FieldParams& params) {
  io::write_file(path, encode_checkpoint(params));
}

FieldParams load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(io::read_file(path)); }

}  // namespace radloc
