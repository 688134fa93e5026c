#include "radloc/matcher.hpp"

#include <omp.h>

#include <charconv>
#include <cmath>
#include <limits>
#include <sstream>

#include "radloc/binary_io.hpp"
#include "radloc/errors.hpp"

namespace radloc {

namespace {

constexpr int kTile = 64;

struct Best {
  double d2 = std::numeric_limits<double>::infinity();
  int idx = std::numeric_limits<int>::max();

  void offer(double d, int i) {
    if (d < d2 || (d == d2 && i < idx)) {
      d2 = d;
      idx = i;
    }
  }
};

inline double sqdist(const Eigen::MatrixXd& a, Eigen::Index i, const Eigen::MatrixXd& b, Eigen::Index j) {
  return (a.col(i) - b.col(j)).squaredNorm();
}

void check_inputs(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  require(a.cols() > 0 && b.cols() > 0, ErrorCode::kInvalidArgument, "empty feature set");
  require(a.rows() == b.rows(), ErrorCode::kInvalidArgument, "feature dimensions differ");
}

std::vector<MutualPair> collect(const std::vector<Best>& row, const std::vector<Best>& col) {
  std::vector<MutualPair> out;
  for (std::size_t i = 0; i < row.size(); ++i) {
    const int j = row[i].idx;
    if (col[static_cast<std::size_t>(j)].idx == static_cast<int>(i))
      out.push_back({static_cast<int>(i), j, -std::sqrt(row[i].d2)});
  }
  return out;
}

std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

double parse_double(const std::string& s) {
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  require(r.ec == std::errc() && r.ptr == s.data() + s.size(), ErrorCode::kIo, "bad number in CSV: " + s);
  return v;
}

}  // namespace

QueryFeatureMap oracle_query_features(const FieldParams& field, const Pose& true_pose, const Intrinsics& k,
                                      int stride, const std::optional<SelectionMask>& selection,
                                      int samples_per_ray, int image_id) {
  RenderOptions opt;
  opt.stride = stride;
  opt.samples_per_ray = samples_per_ray;
  opt.selection = selection;
  opt.color = false;
  const RenderedMap m = render_map(field, true_pose, k, opt);
  QueryFeatureMap q;
  q.grid_width = m.grid_width;
  q.grid_height = m.grid_height;
  q.stride = m.stride;
  q.image_id = image_id;
  q.feature_dims = m.feature_dims;
  q.features = m.features;
  return q;
}

std::vector<MutualPair> mutual_nn(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  check_inputs(a, b);
  const int na = static_cast<int>(a.cols());
  const int nb = static_cast<int>(b.cols());
  std::vector<Best> row(static_cast<std::size_t>(na));
  const int threads = omp_get_max_threads();
  std::vector<std::vector<Best>> col(static_cast<std::size_t>(threads), std::vector<Best>(static_cast<std::size_t>(nb)));
  const int tiles = (na + kTile - 1) / kTile;
#pragma omp parallel for schedule(dynamic, 1)
  for (int t = 0; t < tiles; ++t) {
    auto& cb = col[static_cast<std::size_t>(omp_get_thread_num())];
    const int end = std::min(na, (t + 1) * kTile);
    for (int j0 = 0; j0 < nb; j0 += kTile) {
      const int j1 = std::min(nb, j0 + kTile);
      for (int i = t * kTile; i < end; ++i) {
        Best& rb = row[static_cast<std::size_t>(i)];
        for (int j = j0; j < j1; ++j) {
          const double d = sqdist(a, i, b, j);
          rb.offer(d, j);
          cb[static_cast<std::size_t>(j)].offer(d, i);
        }
      }
    }
  }
  // Lexicographic (distance, index) minimum is order independent.
  for (int t = 1; t < threads; ++t)
    for (int j = 0; j < nb; ++j) col[0][static_cast<std::size_t>(j)].offer(col[t][j].d2, col[t][j].idx);
  return collect(row, col[0]);
}

std::vector<MutualPair> mutual_nn_reference(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  check_inputs(a, b);
  const Eigen::Index na = a.cols(), nb = b.cols();
  Eigen::MatrixXd m(na, nb);
  for (Eigen::Index i = 0; i < na; ++i)
    for (Eigen::Index j = 0; j < nb; ++j) m(i, j) = -sqdist(a, i, b, j);
  std::vector<MutualPair> out;
  for (Eigen::Index i = 0; i < na; ++i) {
    Eigen::Index bj = 0;
    for (Eigen::Index j = 1; j < nb; ++j)
      if (m(i, j) > m(i, bj)) bj = j;
    Eigen::Index bi = 0;
    for (Eigen::Index i2 = 1; i2 < na; ++i2)
      if (m(i2, bj) > m(bi, bj)) bi = i2;
    if (bi == i) out.push_back({static_cast<int>(i), static_cast<int>(bj), -std::sqrt(-m(i, bj))});
  }
  return out;
}

Correspondences match(const QueryFeatureMap& query, const LiftedCloud& cloud) {
  require(query.size() > 0 && cloud.size() > 0, ErrorCode::kInvalidArgument, "empty query or cloud");
  require(query.dim() == cloud.features.rows(), ErrorCode::kInvalidArgument,
          "query and cloud feature dimensions differ");
  Correspondences c;
  for (const MutualPair& p : mutual_nn(query.features, cloud.features))
    c.items.push_back({query.pixel(p.i), cloud.points.col(p.j), p.score, p.i, p.j});
  return c;
}

std::string correspondences_csv(const Correspondences& c) {
  std::string s = "row,col,x,y,z,score\n";
  for (const auto& m : c.items) {
    s += std::to_string(m.pixel.row) + ',' + std::to_string(m.pixel.col) + ',' + fmt(m.point.x()) + ',' +
         fmt(m.point.y()) + ',' + fmt(m.point.z()) + ',' + fmt(m.score) + '\n';
  }
  return s;
}

void save_correspondences(const std::filesystem::path& path, const Correspondences& c) {
  io::write_text(path, correspondences_csv(c));
}

Correspondences load_correspondences(const std::filesystem::path& path) {
  std::istringstream in(io::read_text(path));
  std::string line;
  require(static_cast<bool>(std::getline(in, line)) && line == "row,col,x,y,z,score", ErrorCode::kIo,
          "bad correspondence header");
  Correspondences c;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    for (std::string tok; std::getline(ls, tok, ',');) f.push_back(tok);
    require(f.size() == 6, ErrorCode::kIo, "bad correspondence row");
    Correspondence m;
    m.pixel = {static_cast<int>(parse_double(f[0])), static_cast<int>(parse_double(f[1]))};
    m.point = {parse_double(f[2]), parse_double(f[3]), parse_double(f[4])};
    m.score = parse_double(f[5]);
    m.query_index = m.cloud_index = c.size();
    c.items.push_back(m);
  }
  return c;
}

}  // namespace radloc
