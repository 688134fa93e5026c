#include "radloc/coarse.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include <json.hpp>

#include "radloc/adam.hpp"
#include "radloc/binary_io.hpp"
#include "radloc/errors.hpp"

namespace radloc {

using nlohmann::json;

namespace {

constexpr int kMaxRounds = 100;

Vec3 safe_normalize(const Vec3& v, const Vec3& fallback) {
  const double n = v.norm();
  return n > 1e-12 ? Vec3(v / n) : fallback;
}

// Lloyd iterations with farthest-point seeding over an arbitrary distance.
// Returns compact labels in order of first center index; empty clusters are
// dropped.
template <typename Point, typename Dist, typename Mean>
std::vector<int> lloyd(const std::vector<Point>& pts, int k, std::mt19937_64& rng, Dist dist, Mean mean) {
  const int n = static_cast<int>(pts.size());
  k = std::min(k, n);
  std::vector<Point> centers;
  std::vector<double> min_d(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  int next = std::uniform_int_distribution<int>(0, n - 1)(rng);
  while (static_cast<int>(centers.size()) < k) {
    centers.push_back(pts[static_cast<std::size_t>(next)]);
    for (int i = 0; i < n; ++i)
      min_d[static_cast<std::size_t>(i)] = std::min(min_d[static_cast<std::size_t>(i)], dist(pts[static_cast<std::size_t>(i)], centers.back()));
    next = static_cast<int>(std::max_element(min_d.begin(), min_d.end()) - min_d.begin());
  }
  std::vector<int> assign(static_cast<std::size_t>(n), -1), prev;
  for (int round = 0; round < kMaxRounds; ++round) {
    for (int i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        const double d = dist(pts[static_cast<std::size_t>(i)], centers[static_cast<std::size_t>(c)]);
        if (d < best) {
          best = d;
          assign[static_cast<std::size_t>(i)] = c;
        }
      }
    }
    if (assign == prev) break;
    prev = assign;
    for (int c = 0; c < k; ++c) {
      std::vector<Point> mem;
      for (int i = 0; i < n; ++i)
        if (assign[static_cast<std::size_t>(i)] == c) mem.push_back(pts[static_cast<std::size_t>(i)]);
      if (!mem.empty()) centers[static_cast<std::size_t>(c)] = mean(mem, centers[static_cast<std::size_t>(c)]);
    }
  }
  // Compact the labels.
  std::vector<int> remap(static_cast<std::size_t>(k), -1);
  int used = 0;
  for (int c = 0; c < k; ++c)
    if (std::count(assign.begin(), assign.end(), c) > 0) remap[static_cast<std::size_t>(c)] = used++;
  for (int& a : assign) a = remap[static_cast<std::size_t>(a)];
  return assign;
}

Eigen::VectorXd pack(const PlacePredictor& p) {
  Eigen::VectorXd v(p.theta.size() + p.head_w.size() + p.head_b.size() + p.embeddings.size());
  Eigen::Index o = 0;
  v.segment(o, p.theta.size()) = p.theta;
  o += p.theta.size();
  v.segment(o, p.head_w.size()) = p.head_w.reshaped();
  o += p.head_w.size();
  v.segment(o, p.head_b.size()) = p.head_b;
  o += p.head_b.size();
  v.segment(o, p.embeddings.size()) = p.embeddings.reshaped();
  return v;
}

void unpack(const Eigen::VectorXd& v, PlacePredictor& p) {
  Eigen::Index o = 0;
  p.theta = v.segment(o, p.theta.size());
  o += p.theta.size();
  p.head_w.reshaped() = v.segment(o, p.head_w.size());
  o += p.head_w.size();
  p.head_b = v.segment(o, p.head_b.size());
  o += p.head_b.size();
  p.embeddings.reshaped() = v.segment(o, p.embeddings.size());
}

void normalize_rows(Eigen::MatrixXd& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double n = m.row(r).norm();
    if (n > 0.0) m.row(r) /= n;
  }
}

struct Forward {
  ConvNet::Tape tape;
  Eigen::VectorXd pooled;
  Eigen::VectorXd z;
  Eigen::VectorXd f;
};

Forward forward(const PlacePredictor& p, const RgbImage& image, bool keep_tape) {
  require(image.width == p.image_width && image.height == p.image_height, ErrorCode::kInvalidArgument,
          "image size does not match the place predictor");
  Forward fw;
  const Activation out = p.backbone.forward(p.theta, image_activation(image), keep_tape ? &fw.tape : nullptr);
  fw.pooled = out.data.rowwise().mean();
  fw.z = p.head_w * fw.pooled + p.head_b;
  fw.f = fw.z / std::max(fw.z.norm(), 1e-12);
  return fw;
}

}  // namespace

bool PoseGroup::operator==(const PoseGroup& o) const {
  return id == o.id && members == o.members && centroid == o.centroid && mean_direction == o.mean_direction &&
         representative_id == o.representative_id && representative.rotation == o.representative.rotation &&
         representative.translation == o.representative.translation;
}

double angular_distance(const Vec3& a, const Vec3& b) { return std::acos(std::clamp(a.dot(b), -1.0, 1.0)); }

double combined_distance(const Pose& pose, const Vec3& centroid, const Vec3& mean_direction) {
  return (pose.translation - centroid).norm() + angular_distance(pose.view_direction(), mean_direction);
}

std::vector<PoseGroup> two_stage_cluster(const std::vector<Pose>& poses, int k_spatial, int k_orient,
                                         std::uint64_t seed, ClusterTrace* trace) {
  require(!poses.empty(), ErrorCode::kInvalidArgument, "no poses to cluster");
  require(k_spatial >= 1 && k_orient >= 1, ErrorCode::kInvalidArgument, "cluster counts must be >= 1");
  require(k_spatial <= static_cast<int>(poses.size()), ErrorCode::kInvalidArgument,
          "k_spatial exceeds the pose count");
  std::mt19937_64 rng(seed);
  ClusterTrace local;

  std::vector<Vec3> pos;
  for (const auto& p : poses) pos.push_back(p.translation);
  const auto spatial = lloyd(
      pos, k_spatial, rng, [](const Vec3& a, const Vec3& b) { return (a - b).norm(); },
      [](const std::vector<Vec3>& m, const Vec3&) {
        Vec3 s = Vec3::Zero();
        for (const auto& v : m) s += v;
        return Vec3(s / static_cast<double>(m.size()));
      });
  const int n_spatial = *std::max_element(spatial.begin(), spatial.end()) + 1;

  std::vector<PoseGroup> groups;
  for (int s = 0; s < n_spatial; ++s) {
    std::vector<int> idx;
    std::vector<Vec3> dirs;
    for (std::size_t i = 0; i < poses.size(); ++i)
      if (spatial[i] == s) {
        idx.push_back(static_cast<int>(i));
        dirs.push_back(poses[i].view_direction());
      }
    const auto orient = lloyd(dirs, k_orient, rng, angular_distance, [&](const std::vector<Vec3>& m, const Vec3& old) {
      Vec3 sum = Vec3::Zero();
      for (const auto& v : m) sum += v;
      const Vec3 c = safe_normalize(sum, old);
      local.max_center_norm_error = std::max(local.max_center_norm_error, std::abs(c.norm() - 1.0));
      return c;
    });
    const int n_orient = *std::max_element(orient.begin(), orient.end()) + 1;
    for (int o = 0; o < n_orient; ++o) {
      PoseGroup g;
      g.id = static_cast<int>(groups.size());
      Vec3 tsum = Vec3::Zero(), dsum = Vec3::Zero();
      for (std::size_t m = 0; m < idx.size(); ++m)
        if (orient[m] == o) {
          g.members.push_back(idx[m]);
          tsum += poses[static_cast<std::size_t>(idx[m])].translation;
          dsum += dirs[m];
        }
      g.centroid = tsum / static_cast<double>(g.members.size());
      g.mean_direction = safe_normalize(dsum, poses[static_cast<std::size_t>(g.members.front())].view_direction());
      double best = std::numeric_limits<double>::infinity();
      for (int m : g.members) {
        const double d = combined_distance(poses[static_cast<std::size_t>(m)], g.centroid, g.mean_direction);
        if (d < best) {
          best = d;
          g.representative_id = m;
        }
      }
      g.representative = poses[static_cast<std::size_t>(g.representative_id)];
      groups.push_back(std::move(g));
    }
  }
  if (trace) *trace = local;
  return groups;
}

Pose initial_pose(const PoseGroup& group) {
  require(!group.members.empty(), ErrorCode::kInvalidArgument, "empty pose group");
  return group.representative;
}

ArcFaceResult arcface_loss(const Eigen::MatrixXd& embeddings, const Eigen::VectorXd& feature, int label,
                           double margin, double scale) {
  const Eigen::Index k = embeddings.rows();
  require(k >= 1 && embeddings.cols() == feature.size(), ErrorCode::kInvalidArgument, "embedding shape mismatch");
  require(label >= 0 && label < k, ErrorCode::kInvalidArgument, "label out of range");
  require(std::abs(feature.norm() - 1.0) < 1e-5, ErrorCode::kInvalidArgument, "feature must be unit norm");
  for (Eigen::Index j = 0; j < k; ++j)
    require(std::abs(embeddings.row(j).norm() - 1.0) < 1e-5, ErrorCode::kInvalidArgument,
            "embeddings must be unit norm");

  const Eigen::VectorXd cosines = embeddings * feature;
  const double cy = std::clamp(cosines[label], -1.0, 1.0);
  const double sy = std::max(std::sqrt(std::max(0.0, 1.0 - cy * cy)), 1e-12);
  Eigen::VectorXd logits = scale * cosines;
  // cos(t + m) = cos t cos m - sin t sin m
  logits[label] = scale * (cy * std::cos(margin) - sy * std::sin(margin));
  const double mx = logits.maxCoeff();
  const Eigen::VectorXd e = (logits.array() - mx).exp();
  const double z = e.sum();
  ArcFaceResult r;
  r.loss = -(logits[label] - mx - std::log(z));
  Eigen::VectorXd g_logit = e / z;
  g_logit[label] -= 1.0;
  Eigen::VectorXd g_cos = scale * g_logit;
  g_cos[label] *= std::cos(margin) + std::sin(margin) * cy / sy;
  r.grad_feature = embeddings.transpose() * g_cos;
  r.grad_embeddings = g_cos * feature.transpose();
  return r;
}

void PlaceConfig::validate() const {
  require(embedding_dim >= 2 && epochs >= 0 && batch_images >= 1, ErrorCode::kInvalidArgument,
          "invalid place predictor config");
  require(margin >= 0.0 && scale > 0.0, ErrorCode::kInvalidArgument, "invalid margin or scale");
}

PlacePredictor make_place_predictor(int classes, int width, int height, const PlaceConfig& cfg) {
  cfg.validate();
  require(classes >= 1, ErrorCode::kInvalidArgument, "need at least one class");
  PlacePredictor p;
  p.backbone = ConvNet({{3, 8, 2, true}, {8, 16, 2, true}, {16, 32, 2, true}, {32, 32, 2, true}});
  p.theta = p.backbone.init(cfg.seed);
  std::mt19937_64 rng(cfg.seed + 1);
  const int c = p.backbone.out_channels();
  std::uniform_real_distribution<double> u(-std::sqrt(6.0 / c), std::sqrt(6.0 / c));
  p.head_w.resize(cfg.embedding_dim, c);
  for (Eigen::Index i = 0; i < p.head_w.size(); ++i) p.head_w.data()[i] = u(rng);
  p.head_b = Eigen::VectorXd::Zero(cfg.embedding_dim);
  std::normal_distribution<double> g;
  p.embeddings.resize(classes, cfg.embedding_dim);
  for (Eigen::Index i = 0; i < p.embeddings.size(); ++i) p.embeddings.data()[i] = g(rng);
  normalize_rows(p.embeddings);
  p.margin = cfg.margin;
  p.scale = cfg.scale;
  p.image_width = width;
  p.image_height = height;
  return p;
}

Eigen::VectorXd place_embedding(const PlacePredictor& p, const RgbImage& image) { return forward(p, image, false).f; }

PlaceTrainResult train_place_predictor(std::span<const RgbImage> images, std::span<const int> labels, int classes,
                                       const PlaceConfig& cfg) {
  require(!images.empty() && images.size() == labels.size(), ErrorCode::kInvalidArgument,
          "images and labels must be non-empty and aligned");
  PlaceTrainResult res;
  PlacePredictor& p = res.predictor;
  p = make_place_predictor(classes, images.front().width, images.front().height, cfg);
  Eigen::VectorXd params = pack(p);
  Adam adam(params.size());
  std::mt19937_64 rng(cfg.seed);
  const int n = static_cast<int>(images.size());
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  const int batches = (n + cfg.batch_images - 1) / cfg.batch_images;
  const Eigen::Index n_backbone = p.theta.size();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (int b = 0; b < batches; ++b) {
      const int lo = b * cfg.batch_images, hi = std::min(n, lo + cfg.batch_images);
      Eigen::VectorXd g_theta = Eigen::VectorXd::Zero(n_backbone);
      Eigen::MatrixXd g_w = Eigen::MatrixXd::Zero(p.head_w.rows(), p.head_w.cols());
      Eigen::VectorXd g_b = Eigen::VectorXd::Zero(p.head_b.size());
      Eigen::MatrixXd g_e = Eigen::MatrixXd::Zero(p.embeddings.rows(), p.embeddings.cols());
      const double inv = 1.0 / (hi - lo);
      for (int s = lo; s < hi; ++s) {
        const int i = order[static_cast<std::size_t>(s)];
        const int label = labels[static_cast<std::size_t>(i)];
        require(label >= 0 && label < classes, ErrorCode::kInvalidArgument, "label out of range");
        Forward fw = forward(p, images[static_cast<std::size_t>(i)], true);
        const ArcFaceResult a = arcface_loss(p.embeddings, fw.f, label, p.margin, p.scale);
        epoch_loss += a.loss;
        g_e += inv * a.grad_embeddings;
        const double zn = std::max(fw.z.norm(), 1e-12);
        const Eigen::VectorXd g_z = inv * (a.grad_feature - fw.f * fw.f.dot(a.grad_feature)) / zn;
        g_w += g_z * fw.pooled.transpose();
        g_b += g_z;
        const Eigen::VectorXd g_pool = p.head_w.transpose() * g_z;
        const Eigen::Index pixels = fw.tape.output.data.cols();
        const Eigen::MatrixXd g_out = (g_pool / static_cast<double>(pixels)).replicate(1, pixels);
        p.backbone.backward(p.theta, fw.tape, g_out, g_theta);
      }
      Eigen::VectorXd grad(params.size());
      Eigen::Index o = 0;
      grad.segment(o, n_backbone) = g_theta;
      o += n_backbone;
      grad.segment(o, g_w.size()) = g_w.reshaped();
      o += g_w.size();
      grad.segment(o, g_b.size()) = g_b;
      o += g_b.size();
      grad.segment(o, g_e.size()) = g_e.reshaped();
      adam.step(params, grad, exponential_lr(cfg.lr_start, cfg.lr_end, epoch * batches + b, cfg.epochs * batches));
      unpack(params, p);
      normalize_rows(p.embeddings);
      params = pack(p);
    }
    res.loss_log.push_back(epoch_loss / n);
  }
  p.trained = true;
  return res;
}

PlacePrediction predict_place(const PlacePredictor& p, const RgbImage& image) {
  require(p.trained, ErrorCode::kUntrained, "place predictor has not been trained");
  const Forward fw = forward(p, image, false);
  const Eigen::VectorXd logits = p.scale * (p.embeddings * fw.f);
  const Eigen::VectorXd e = (logits.array() - logits.maxCoeff()).exp();
  PlacePrediction out;
  out.probabilities = e / e.sum();
  Eigen::Index best = 0;
  out.confidence = out.probabilities.maxCoeff(&best);
  out.group = static_cast<int>(best);
  return out;
}

std::string encode_pose_groups(const std::vector<PoseGroup>& groups) {
  json arr = json::array();
  for (const auto& g : groups) {
    std::vector<double> rep;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) rep.push_back(g.representative.rotation(r, c));
    for (int i = 0; i < 3; ++i) rep.push_back(g.representative.translation[i]);
    arr.push_back({{"id", g.id},
                   {"members", g.members},
                   {"centroid", {g.centroid.x(), g.centroid.y(), g.centroid.z()}},
                   {"mean_direction", {g.mean_direction.x(), g.mean_direction.y(), g.mean_direction.z()}},
                   {"representative_id", g.representative_id},
                   {"representative", rep}});
  }
  return json{{"version", 1}, {"groups", arr}}.dump(2) + "\n";
}

std::vector<PoseGroup> decode_pose_groups(const std::string& text) {
  try {
    const json j = json::parse(text);
    require(j.at("version").get<int>() == 1, ErrorCode::kIo, "unsupported pose-group version");
    std::vector<PoseGroup> out;
    for (const auto& e : j.at("groups")) {
      PoseGroup g;
      g.id = e.at("id").get<int>();
      g.members = e.at("members").get<std::vector<int>>();
      const auto c = e.at("centroid").get<std::array<double, 3>>();
      const auto d = e.at("mean_direction").get<std::array<double, 3>>();
      g.centroid = Vec3(c[0], c[1], c[2]);
      g.mean_direction = Vec3(d[0], d[1], d[2]);
      g.representative_id = e.at("representative_id").get<int>();
      const auto rep = e.at("representative").get<std::array<double, 12>>();
      for (int r = 0; r < 3; ++r)
        for (int cc = 0; cc < 3; ++cc) g.representative.rotation(r, cc) = rep[static_cast<std::size_t>(r * 3 + cc)];
      g.representative.translation = Vec3(rep[9], rep[10], rep[11]);
      require(!g.members.empty(), ErrorCode::kIo, "pose group without members");
      out.push_back(std::move(g));
    }
    return out;
  } catch (const json::exception& e) {
    fail(ErrorCode::kIo, std::string("bad pose-group file: ") + e.what());
  }
}

void save_pose_groups(const std::filesystem::path& path, const std::vector<PoseGroup>& groups) {
  io::write_text(path, encode_pose_groups(groups));
}

std::vector<PoseGroup> load_pose_groups(const std::filesystem::path& path) {
  return decode_pose_groups(io::read_text(path));
}

std::vector<std::uint8_t> encode_place_predictor(const PlacePredictor& p) {
  std::vector<std::uint8_t> out;
  io::put_bytes(out, "MLPP");
  io::put<std::uint32_t>(out, 1);
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(p.classes()));
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(p.embeddings.cols()));
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(p.image_width));
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(p.image_height));
  io::put<double>(out, p.margin);
  io::put<double>(out, p.scale);
  io::put<std::uint8_t>(out, p.trained ? 1 : 0);
  const Eigen::VectorXd v = pack(p);
  io::put<std::uint64_t>(out, static_cast<std::uint64_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) io::put<double>(out, v[i]);
  return out;
}

PlacePredictor decode_place_predictor(std::span<const std::uint8_t> bytes) {
  io::Reader rd(bytes);
  require(rd.get_string(4) == "MLPP" && rd.get<std::uint32_t>() == 1, ErrorCode::kCorruptCheckpoint,
          "not a place predictor file");
  PlaceConfig cfg;
  const int classes = static_cast<int>(rd.get<std::uint32_t>());
  cfg.embedding_dim = static_cast<int>(rd.get<std::uint32_t>());
  const int w = static_cast<int>(rd.get<std::uint32_t>());
  const int h = static_cast<int>(rd.get<std::uint32_t>());
  cfg.margin = rd.get<double>();
  cfg.scale = rd.get<double>();
  PlacePredictor p = make_place_predictor(classes, w, h, cfg);
  p.trained = rd.get<std::uint8_t>() != 0;
  Eigen::VectorXd v = pack(p);
  require(rd.get<std::uint64_t>() == static_cast<std::uint64_t>(v.size()), ErrorCode::kCorruptCheckpoint,
          "place predictor size mismatch");
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = rd.get<double>();
  require(rd.done(), ErrorCode::kCorruptCheckpoint, "trailing bytes in place predictor file");
  unpack(v, p);
  return p;
}

}  // namespace radloc
