#include "radloc/selection.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "radloc/binary_io.hpp"
#include "radloc/errors.hpp"
#include "radloc/matcher.hpp"
#include "radloc/renderer.hpp"

namespace radloc {

std::string to_string(SelectionMode mode) {
  return mode == SelectionMode::kAsWritten ? "as-written" : "exact-budget";
}

SelectionMode selection_mode_from_string(const std::string& s) {
  if (s == "as-written") return SelectionMode::kAsWritten;
  if (s == "exact-budget") return SelectionMode::kExactBudget;
  fail(ErrorCode::kInvalidArgument, "unknown selection mode: " + s);
}

SelectionMask::SelectionMask(std::vector<std::uint8_t> bits, int budget, SelectionMode mode)
    : bits_(std::move(bits)), budget_(budget), mode_(mode) {
  for (auto b : bits_) require(b <= 1, ErrorCode::kInvalidArgument, "mask entries must be 0 or 1");
  require(budget_ >= 1 && budget_ <= dim(), ErrorCode::kInvalidArgument, "budget must be in [1, D]");
  const int n = selected_count();
  require(n >= 1 && n <= budget_, ErrorCode::kInvalidArgument, "selected count must be in [1, budget]");
}

SelectionMask SelectionMask::all(int dim, SelectionMode mode) {
  return SelectionMask(std::vector<std::uint8_t>(static_cast<std::size_t>(dim), 1), dim, mode);
}

SelectionMask SelectionMask::from_indices(int dim, const std::vector<int>& indices, int budget, SelectionMode mode) {
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(dim), 0);
  for (int i : indices) {
    require(i >= 0 && i < dim, ErrorCode::kInvalidArgument, "mask index out of range");
    bits[static_cast<std::size_t>(i)] = 1;
  }
  return SelectionMask(std::move(bits), budget, mode);
}

int SelectionMask::selected_count() const {
  return static_cast<int>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

std::vector<int> SelectionMask::indices() const {
  std::vector<int> out;
  for (int d = 0; d < dim(); ++d)
    if (bits_[static_cast<std::size_t>(d)]) out.push_back(d);
  return out;
}

std::string encode_mask(const SelectionMask& mask) {
  std::string s = std::to_string(mask.dim()) + ' ' + std::to_string(mask.budget()) + ' ' + to_string(mask.mode()) + '\n';
  for (int d = 0; d < mask.dim(); ++d) {
    if (d) s += ' ';
    s += mask.selected(d) ? '1' : '0';
  }
  return s + '\n';
}

SelectionMask decode_mask(const std::string& text) {
  std::istringstream in(text);
  int dim = 0, budget = 0;
  std::string mode;
  require(static_cast<bool>(in >> dim >> budget >> mode) && dim > 0, ErrorCode::kIo, "bad mask header");
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(dim));
  for (auto& b : bits) {
    int v = -1;
    require(static_cast<bool>(in >> v) && (v == 0 || v == 1), ErrorCode::kIo, "bad mask entry");
    b = static_cast<std::uint8_t>(v);
  }
  std::string rest;
  require(!(in >> rest), ErrorCode::kIo, "trailing data in mask file");
  return SelectionMask(std::move(bits), budget, selection_mode_from_string(mode));
}

void save_mask(const std::filesystem::path& path, const SelectionMask& mask) { io::write_text(path, encode_mask(mask)); }

SelectionMask load_mask(const std::filesystem::path& path) { return decode_mask(io::read_text(path)); }

Pose perturb_pose(const Pose& pose, double translation_radius, double max_rotation_deg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss;
  std::uniform_real_distribution<double> unit;
  auto random_direction = [&] {
    Vec3 v;
    do {
      v = {gauss(rng), gauss(rng), gauss(rng)};
    } while (v.norm() < 1e-12);
    return Vec3(v.normalized());
  };
  const Vec3 t = random_direction() * translation_radius * std::cbrt(unit(rng));
  const Vec3 axis = random_direction();
  const double angle = unit(rng) * max_rotation_deg * std::numbers::pi / 180.0;
  return compose(pose, Pose{axis_angle(axis, angle), t});
}

MatchPairSet generate_gt_pairs(const FieldParams& field, const Pose& database_pose, const Intrinsics& k,
                               const PairGenConfig& cfg, std::uint64_t seed) {
  return generate_gt_pairs_at(field, database_pose,
                              perturb_pose(database_pose, cfg.translation_radius, cfg.max_rotation_deg, seed), k, cfg);
}

MatchPairSet generate_gt_pairs_at(const FieldParams& field, const Pose& database_pose, const Pose& perturbed,
                                  const Intrinsics& k, const PairGenConfig& cfg) {
  RenderOptions opt;
  opt.stride = cfg.stride;
  opt.samples_per_ray = cfg.samples_per_ray;
  opt.color = false;
  const RenderedMap db = render_map(field, database_pose, k, opt);
  const RenderedMap pert = render_map(field, perturbed, k, opt);
  const LiftedCloud cloud = lift_to_3d(pert, cfg.opacity_threshold);

  // Only opaque pixels carry a meaningful 2D feature.
  std::vector<int> keep;
  for (int i = 0; i < db.size(); ++i)
    if (db.acc[i] > cfg.opacity_threshold) keep.push_back(i);
  MatchPairSet out;
  out.query_pose = database_pose;
  out.init_pose = perturbed;
  if (keep.empty() || cloud.size() == 0)
    fail(ErrorCode::kInsufficientOverlap, "no opaque surface shared by the two views");

  Eigen::MatrixXd f2d(db.features.rows(), static_cast<Eigen::Index>(keep.size()));
  for (std::size_t c = 0; c < keep.size(); ++c) f2d.col(static_cast<Eigen::Index>(c)) = db.features.col(keep[c]);
  const auto mutual = mutual_nn(f2d, cloud.features);
  out.candidates = static_cast<int>(mutual.size());
  for (const auto& m : mutual) {
    const int i = keep[static_cast<std::size_t>(m.i)];
    const auto uv = project(database_pose, k, cloud.points.col(m.j));
    if (!uv || (*uv - pixel_center(db.pixel(i))).norm() > cfg.reproj_threshold) continue;
    out.pairs.push_back({i, cloud.grid_index[static_cast<std::size_t>(m.j)], f2d.col(m.i), cloud.features.col(m.j)});
  }
  if (static_cast<int>(out.pairs.size()) < cfg.min_pairs)
    fail(ErrorCode::kInsufficientOverlap, "only " + std::to_string(out.pairs.size()) +
                                              " ground-truth pairs survived filtering");
  return out;
}

std::string to_string(CostMetric m) { return m == CostMetric::kAbsolute ? "absolute" : "squared"; }
std::string to_string(CostNormalization n) { return n == CostNormalization::kNone ? "none" : "dispersion"; }

CostMetric cost_metric_from_string(const std::string& s) {
  if (s == "absolute") return CostMetric::kAbsolute;
  if (s == "squared") return CostMetric::kSquared;
  fail(ErrorCode::kInvalidArgument, "unknown cost metric: " + s);
}

CostNormalization cost_normalization_from_string(const std::string& s) {
  if (s == "none") return CostNormalization::kNone;
  if (s == "dispersion") return CostNormalization::kDispersion;
  fail(ErrorCode::kInvalidArgument, "unknown cost normalization: " + s);
}

namespace {

void add_costs(const MatchPairSet& set, CostMetric metric, Eigen::VectorXd& c) {
  for (const auto& p : set.pairs) {
    require(p.f2d.size() == c.size() && p.f3d.size() == c.size(), ErrorCode::kInvalidArgument,
            "pair feature dimension mismatch");
    const Eigen::ArrayXd d = (p.f2d - p.f3d).array();
    if (metric == CostMetric::kAbsolute)
      c.array() += d.abs();
    else
      c.array() += d.square();
  }
}

// Lexicographic comparison of two index sets given as masks.
bool lex_less(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
  for (std::size_t d = 0; d < a.size(); ++d)
    if (a[d] != b[d]) return a[d] > b[d];
  return false;
}

double objective_bits(const Eigen::VectorXd& c, const std::vector<std::uint8_t>& bits, SelectionMode mode) {
  double sum = 0.0;
  int n = 0;
  for (std::size_t d = 0; d < bits.size(); ++d)
    if (bits[d]) {
      sum += c[static_cast<Eigen::Index>(d)];
      ++n;
    }
  return mode == SelectionMode::kAsWritten ? sum / n : sum;
}

void check_cost(const PerDimCost& cost, int budget) {
  require(cost.dim() >= 1, ErrorCode::kInvalidArgument, "empty cost vector");
  require(budget >= 1 && budget <= cost.dim(), ErrorCode::kInvalidArgument, "budget must be in [1, D]");
  require(cost.c.allFinite() && (cost.c.array() >= 0.0).all(), ErrorCode::kInvalidArgument,
          "costs must be finite and non-negative");
}

}  // namespace

PerDimCost accumulate_costs(const MatchPairSet& pairs, CostMetric metric) {
  require(!pairs.pairs.empty(), ErrorCode::kInvalidArgument, "empty pair set");
  PerDimCost out{Eigen::VectorXd::Zero(pairs.dim())};
  add_costs(pairs, metric, out.c);
  return out;
}

PerDimCost accumulate_costs(const std::vector<MatchPairSet>& sets, CostMetric metric) {
  int dim = -1;
  for (const auto& s : sets)
    if (!s.pairs.empty()) {
      require(dim < 0 || dim == s.dim(), ErrorCode::kInvalidArgument, "pair sets differ in dimension");
      dim = s.dim();
    }
  require(dim > 0, ErrorCode::kInvalidArgument, "empty pair sets");
  PerDimCost out{Eigen::VectorXd::Zero(dim)};
  for (const auto& s : sets) add_costs(s, metric, out.c);
  return out;
}

PerDimCost normalize_by_dispersion(const PerDimCost& cost, const std::vector<MatchPairSet>& sets) {
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(cost.dim());
  long n = 0;
  for (const auto& s : sets)
    for (const auto& p : s.pairs) {
      mean += p.f3d;
      ++n;
    }
  require(n > 0, ErrorCode::kInvalidArgument, "empty pair sets");
  mean /= static_cast<double>(n);
  Eigen::VectorXd disp = Eigen::VectorXd::Zero(cost.dim());
  for (const auto& s : sets)
    for (const auto& p : s.pairs) disp.array() += (p.f3d - mean).array().abs();
  // A constant dimension scores 1: its error is as large as its spread.
  constexpr double kTiny = 1e-12;
  return {((cost.c.array() + kTiny) / (disp.array() + kTiny)).matrix()};
}

double selection_objective(const PerDimCost& cost, const SelectionMask& mask) {
  require(mask.dim() == cost.dim(), ErrorCode::kInvalidArgument, "mask and cost dimensions differ");
  return objective_bits(cost.c, mask.bits(), mask.mode());
}

SelectionMask solve_selection(const PerDimCost& cost, int budget, SelectionMode mode) {
  check_cost(cost, budget);
  const int dim = cost.dim();
  std::vector<int> order(static_cast<std::size_t>(dim));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return cost.c[a] < cost.c[b]; });

  std::vector<std::uint8_t> bits(static_cast<std::size_t>(dim), 0);
  if (mode == SelectionMode::kExactBudget) {
    for (int r = 0; r < budget; ++r) bits[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])] = 1;
    return SelectionMask(std::move(bits), budget, mode);
  }
  // The best set of each size is the cheapest prefix; keep the shortest best.
  std::vector<std::uint8_t> best;
  double best_obj = 0.0;
  for (int r = 0; r < budget; ++r) {
    bits[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])] = 1;
    const double obj = objective_bits(cost.c, bits, mode);
    if (best.empty() || obj < best_obj) {
      best = bits;
      best_obj = obj;
    }
  }
  return SelectionMask(std::move(best), budget, mode);
}

SelectionMask brute_force_selection(const PerDimCost& cost, int budget, SelectionMode mode) {
  check_cost(cost, budget);
  const int dim = cost.dim();
  require(dim <= 20, ErrorCode::kInvalidArgument, "brute force is limited to D <= 20");
  std::vector<std::uint8_t> best, bits(static_cast<std::size_t>(dim));
  double best_obj = 0.0;
  int best_n = 0;
  for (std::uint32_t m = 1; m < (1u << dim); ++m) {
    const int n = std::popcount(m);
    if (n > budget || (mode == SelectionMode::kExactBudget && n != budget)) continue;
    for (int d = 0; d < dim; ++d) bits[static_cast<std::size_t>(d)] = (m >> d) & 1u;
    const double obj = objective_bits(cost.c, bits, mode);
    const bool better = best.empty() || obj < best_obj ||
                        (obj == best_obj && (n < best_n || (n == best_n && lex_less(bits, best))));
    if (better) {
      best = bits;
      best_obj = obj;
      best_n = n;
    }
  }
  return SelectionMask(std::move(best), budget, mode);
}

}  // namespace radloc
