#include "radloc/config.hpp"

#include <set>

#include <json.hpp>

#include "radloc/binary_io.hpp"
#include "radloc/errors.hpp"

namespace radloc {

using nlohmann::json;

namespace {

std::string layout_name(LayoutKind k) {
  switch (k) {
    case LayoutKind::kRing: return "ring";
    case LayoutKind::kGrid: return "grid";
    case LayoutKind::kMultiSite: return "multi-site";
  }
  return "multi-site";
}

LayoutKind layout_from_name(const std::string& s) {
  if (s == "ring") return LayoutKind::kRing;
  if (s == "grid") return LayoutKind::kGrid;
  if (s == "multi-site") return LayoutKind::kMultiSite;
  fail(ErrorCode::kConfig, "unknown layout kind: " + s);
}

// Reads optional keys from one JSON object and rejects the rest.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) fail(ErrorCode::kConfig, "'" + name_ + "' must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      fail(ErrorCode::kConfig, "bad value for " + name_ + "." + key);
    }
  }

  template <typename T, typename Parse>
  void get_enum(const char* key, T& out, Parse parse) {
    std::string s;
    get(key, s);
    if (j_.contains(key)) {
      try {
        out = parse(s);
      } catch (const Error&) {
        fail(ErrorCode::kConfig, "bad value for " + name_ + "." + key + ": " + s);
      }
    }
  }

  Section sub(const char* key) {
    seen_.insert(key);
    static const json empty = json::object();
    return Section(j_.contains(key) ? j_.at(key) : empty, name_.empty() ? key : name_ + "." + key);
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) fail(ErrorCode::kConfig, "unknown key: " + (name_.empty() ? k : name_ + "." + k));
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

}  // namespace

std::string to_string(QueryFeatureSource s) { return s == QueryFeatureSource::kOracle ? "oracle" : "projector"; }

QueryFeatureSource query_feature_source_from_string(const std::string& s) {
  if (s == "oracle") return QueryFeatureSource::kOracle;
  if (s == "projector") return QueryFeatureSource::kProjector;
  fail(ErrorCode::kInvalidArgument, "unknown query feature source: " + s);
}

void PipelineConfig::validate() const {
  try {
    const auto& sc = scene;
    require(sc.train_poses >= 2 && sc.query_poses >= 1, ErrorCode::kConfig, "need >= 2 train and >= 1 query poses");
    require(sc.width >= 8 && sc.height >= 8 && sc.fov_deg > 0.0 && sc.fov_deg < 180.0, ErrorCode::kConfig,
            "bad image size or field of view");
    require(sc.layout.sites >= 1 && sc.layout.headings >= 1, ErrorCode::kConfig, "layout needs sites and headings");
    field.validate();
    train.validate();
    require(partition.poses_per_field >= 1, ErrorCode::kConfig, "poses_per_field must be >= 1");
    require(partition.occupancy.resolution >= 1 && partition.occupancy.pixel_step >= 1 &&
                partition.occupancy.samples_per_ray >= 1,
            ErrorCode::kConfig, "bad occupancy settings");
    require(selection.budget >= 1 && selection.budget <= field.feature_dim(), ErrorCode::kConfig,
            "selection budget must be in [1, D]");
    require(selection.views >= 1, ErrorCode::kConfig, "selection needs at least one view");
    require(selection.pairs.stride >= 1 && selection.pairs.min_pairs >= 1 && selection.pairs.reproj_threshold > 0.0,
            ErrorCode::kConfig, "bad pair generation settings");
    require(match.stride >= 1 && match.samples_per_ray >= 2 && match.opacity_threshold >= 0.0 &&
                match.opacity_threshold < 1.0,
            ErrorCode::kConfig, "bad matching settings");
    projector.validate();
    require(coarse.k_spatial >= 1 && coarse.k_orient >= 1, ErrorCode::kConfig, "cluster counts must be >= 1");
    require(coarse.k_spatial <= sc.train_poses, ErrorCode::kConfig, "k_spatial exceeds the training pose count");
    coarse.place.validate();
    ransac.validate();
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kConfig) throw;
    fail(ErrorCode::kConfig, e.what());
  }
}

void PipelineConfig::reseed(std::uint64_t s) {
  seed = s;
  scene.train_seed = s * 7919 + 1;
  scene.query_seed = s * 7919 + 2;
  train.seed = s * 7919 + 3;
  projector.seed = s * 7919 + 4;
  coarse.place.seed = s * 7919 + 5;
  ransac.seed = s * 7919 + 6;
}

PipelineConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorCode::kConfig, std::string("config is not valid JSON: ") + e.what());
  }
  PipelineConfig c;
  Section root(j, "");
  root.get("seed", c.seed);
  std::string out = c.output_dir.string();
  root.get("output_dir", out);
  c.output_dir = out;

  {
    Section s = root.sub("scene");
    s.get("train_poses", c.scene.train_poses);
    s.get("query_poses", c.scene.query_poses);
    s.get("width", c.scene.width);
    s.get("height", c.scene.height);
    s.get("fov_deg", c.scene.fov_deg);
    s.get("train_seed", c.scene.train_seed);
    s.get("query_seed", c.scene.query_seed);
    auto& l = c.scene.layout;
    s.get_enum("layout", l.kind, layout_from_name);
    s.get("sites", l.sites);
    s.get("headings", l.headings);
    s.get("site_radius", l.site_radius);
    s.get("height_above_ground", l.height);
    s.get("pitch_deg", l.pitch_deg);
    s.get("heading_spread_deg", l.heading_spread_deg);
    s.get("position_jitter", l.position_jitter);
    s.get("angle_jitter_deg", l.angle_jitter_deg);
    s.finish();
  }
  {
    Section s = root.sub("field");
    s.get("pos_octaves", c.field.pos_octaves);
    s.get("dir_octaves", c.field.dir_octaves);
    s.get("trunk_width", c.field.trunk_width);
    s.get("trunk_depth", c.field.trunk_depth);
    s.get("mlp_dim", c.field.mlp_dim);
    s.get("color_hidden", c.field.color_hidden);
    s.finish();
  }
  {
    Section s = root.sub("train");
    s.get("steps", c.train.steps);
    s.get("batch_rays", c.train.batch_rays);
    s.get("samples_per_ray", c.train.samples_per_ray);
    s.get("lr_start", c.train.lr_start);
    s.get("lr_end", c.train.lr_end);
    s.get("seed", c.train.seed);
    s.get("random_background", c.train.random_background);
    s.finish();
  }
  {
    Section s = root.sub("partition");
    s.get_enum("strategy", c.partition.strategy, partition_strategy_from_string);
    s.get("poses_per_field", c.partition.poses_per_field);
    s.get("resolution", c.partition.occupancy.resolution);
    s.get("pixel_step", c.partition.occupancy.pixel_step);
    s.get("samples_per_ray", c.partition.occupancy.samples_per_ray);
    s.finish();
  }
  {
    Section s = root.sub("selection");
    s.get("enabled", c.selection.enabled);
    s.get("budget", c.selection.budget);
    s.get_enum("mode", c.selection.mode, selection_mode_from_string);
    s.get_enum("metric", c.selection.metric, cost_metric_from_string);
    s.get_enum("normalization", c.selection.normalization, cost_normalization_from_string);
    s.get("views", c.selection.views);
    auto& p = c.selection.pairs;
    s.get("translation_radius", p.translation_radius);
    s.get("max_rotation_deg", p.max_rotation_deg);
    s.get("reproj_threshold", p.reproj_threshold);
    s.get("stride", p.stride);
    s.get("samples_per_ray", p.samples_per_ray);
    s.get("opacity_threshold", p.opacity_threshold);
    s.get("min_pairs", p.min_pairs);
    s.finish();
  }
  {
    Section s = root.sub("match");
    s.get("stride", c.match.stride);
    s.get("samples_per_ray", c.match.samples_per_ray);
    s.get("opacity_threshold", c.match.opacity_threshold);
    s.get_enum("query_features", c.match.query_features, query_feature_source_from_string);
    s.finish();
  }
  {
    Section s = root.sub("projector");
    s.get("epochs", c.projector.epochs);
    s.get("batch_images", c.projector.batch_images);
    s.get("lr_start", c.projector.lr_start);
    s.get("lr_end", c.projector.lr_end);
    s.get("samples_per_ray", c.projector.samples_per_ray);
    s.get("val_fraction", c.projector.val_fraction);
    s.get("seed", c.projector.seed);
    s.finish();
  }
  {
    Section s = root.sub("coarse");
    s.get("k_spatial", c.coarse.k_spatial);
    s.get("k_orient", c.coarse.k_orient);
    auto& p = c.coarse.place;
    s.get("embedding_dim", p.embedding_dim);
    s.get("margin", p.margin);
    s.get("scale", p.scale);
    s.get("epochs", p.epochs);
    s.get("batch_images", p.batch_images);
    s.get("lr_start", p.lr_start);
    s.get("lr_end", p.lr_end);
    s.get("seed", p.seed);
    s.finish();
  }
  {
    Section s = root.sub("ransac");
    s.get("max_iterations", c.ransac.max_iterations);
    s.get("threshold", c.ransac.threshold);
    s.get("confidence", c.ransac.confidence);
    s.get("refine_iterations", c.ransac.refine_iterations);
    s.get("seed", c.ransac.seed);
    s.finish();
  }
  root.finish();
  c.projector.stride = c.match.stride;
  c.validate();
  return c;
}

PipelineConfig load_config(const std::filesystem::path& path) { return parse_config(io::read_text(path)); }

std::string encode_config(const PipelineConfig& c) {
  const auto& l = c.scene.layout;
  const auto& pp = c.selection.pairs;
  const auto& pl = c.coarse.place;
  json j = {
      {"seed", c.seed},
      {"output_dir", c.output_dir.string()},
      {"scene",
       {{"train_poses", c.scene.train_poses}, {"query_poses", c.scene.query_poses}, {"width", c.scene.width},
        {"height", c.scene.height}, {"fov_deg", c.scene.fov_deg}, {"train_seed", c.scene.train_seed},
        {"query_seed", c.scene.query_seed}, {"layout", layout_name(l.kind)}, {"sites", l.sites},
        {"headings", l.headings}, {"site_radius", l.site_radius}, {"height_above_ground", l.height},
        {"pitch_deg", l.pitch_deg}, {"heading_spread_deg", l.heading_spread_deg},
        {"position_jitter", l.position_jitter}, {"angle_jitter_deg", l.angle_jitter_deg}}},
      {"field",
       {{"pos_octaves", c.field.pos_octaves}, {"dir_octaves", c.field.dir_octaves},
        {"trunk_width", c.field.trunk_width}, {"trunk_depth", c.field.trunk_depth}, {"mlp_dim", c.field.mlp_dim},
        {"color_hidden", c.field.color_hidden}}},
      {"train",
       {{"steps", c.train.steps}, {"batch_rays", c.train.batch_rays}, {"samples_per_ray", c.train.samples_per_ray},
        {"lr_start", c.train.lr_start}, {"lr_end", c.train.lr_end}, {"seed", c.train.seed},
        {"random_background", c.train.random_background}}},
      {"partition",
       {{"strategy", to_string(c.partition.strategy)}, {"poses_per_field", c.partition.poses_per_field},
        {"resolution", c.partition.occupancy.resolution}, {"pixel_step", c.partition.occupancy.pixel_step},
        {"samples_per_ray", c.partition.occupancy.samples_per_ray}}},
      {"selection",
       {{"enabled", c.selection.enabled}, {"budget", c.selection.budget}, {"mode", to_string(c.selection.mode)},
        {"metric", to_string(c.selection.metric)}, {"normalization", to_string(c.selection.normalization)},
        {"views", c.selection.views}, {"translation_radius", pp.translation_radius},
        {"max_rotation_deg", pp.max_rotation_deg}, {"reproj_threshold", pp.reproj_threshold},
        {"stride", pp.stride}, {"samples_per_ray", pp.samples_per_ray},
        {"opacity_threshold", pp.opacity_threshold}, {"min_pairs", pp.min_pairs}}},
      {"match",
       {{"stride", c.match.stride}, {"samples_per_ray", c.match.samples_per_ray},
        {"opacity_threshold", c.match.opacity_threshold}, {"query_features", to_string(c.match.query_features)}}},
      {"projector",
       {{"epochs", c.projector.epochs}, {"batch_images", c.projector.batch_images},
        {"lr_start", c.projector.lr_start}, {"lr_end", c.projector.lr_end},
        {"samples_per_ray", c.projector.samples_per_ray}, {"val_fraction", c.projector.val_fraction},
        {"seed", c.projector.seed}}},
      {"coarse",
       {{"k_spatial", c.coarse.k_spatial}, {"k_orient", c.coarse.k_orient}, {"embedding_dim", pl.embedding_dim},
        {"margin", pl.margin}, {"scale", pl.scale}, {"epochs", pl.epochs}, {"batch_images", pl.batch_images},
        {"lr_start", pl.lr_start}, {"lr_end", pl.lr_end}, {"seed", pl.seed}}},
      {"ransac",
       {{"max_iterations", c.ransac.max_iterations}, {"threshold", c.ransac.threshold},
        {"confidence", c.ransac.confidence}, {"refine_iterations", c.ransac.refine_iterations},
        {"seed", c.ransac.seed}}},
  };
  return j.dump(2) + "\n";
}

}  // namespace radloc
