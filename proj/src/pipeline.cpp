#include "radloc/pipeline.hpp"

#include <chrono>

#include "radloc/binary_io.hpp"
#include "radloc/errors.hpp"
#include "radloc/matcher.hpp"
#include "radloc/pnp.hpp"
#include "radloc/renderer.hpp"
#include "radloc/trainer.hpp"

namespace radloc {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::vector<PosedImage> member_images(const PipelineState& s, int id) {
  std::vector<PosedImage> out;
  for (int m : s.partition.members(id)) out.push_back(s.train_images[static_cast<std::size_t>(m)]);
  return out;
}

}  // namespace

int heldout_field(const PipelineState& s, const Pose& pose) {
  const int id = allocate(pose, s.intrinsics, s.partition, s.config.partition.occupancy);
  if (id >= 0 && !s.partition.members(id).empty()) return id;
  // Nearest training camera decides when the allocated cell holds no poses.
  double best = std::numeric_limits<double>::infinity();
  int out = 0;
  for (std::size_t i = 0; i < s.train_images.size(); ++i) {
    const double d = (s.train_images[i].pose.translation - pose.translation).norm();
    if (d < best) {
      best = d;
      out = s.partition.nerf_id[i];
    }
  }
  return out;
}

PipelineState prepare(const PipelineConfig& cfg) {
  cfg.validate();
  PipelineState s;
  s.config = cfg;
  s.scene = make_reference_scene();
  s.intrinsics = cfg.scene.intrinsics();
  const Trajectory train = make_trajectory(s.scene, cfg.scene.layout, cfg.scene.train_poses, cfg.scene.train_seed);
  const Trajectory query = make_trajectory(s.scene, cfg.scene.layout, cfg.scene.query_poses, cfg.scene.query_seed);
  for (const auto& p : train.poses) s.train_images.push_back(raytrace(s.scene, p, s.intrinsics));
  for (const auto& p : query.poses) s.query_images.push_back(raytrace(s.scene, p, s.intrinsics));
  s.train_labels = train.labels;
  return s;
}

void run_partition(PipelineState& s) {
  const auto& cfg = s.config;
  const int k = cluster_count(static_cast<int>(s.train_images.size()), cfg.partition.poses_per_field);
  s.clouds.clear();
  for (std::size_t i = 0; i < s.train_images.size(); ++i)
    s.clouds.push_back(pose_point_cloud(s.train_images[i].pose, s.intrinsics, s.scene.bounds, cfg.partition.occupancy,
                                        static_cast<int>(i)));
  if (cfg.partition.strategy == PartitionStrategy::kPoseAware) {
    std::vector<OccupancyGrid> grids;
    for (const auto& c : s.clouds) grids.push_back(occupancy_from_points(c, s.scene.bounds, cfg.partition.occupancy.resolution));
    s.partition = cluster_poses(grids, k, cfg.seed, s.scene.bounds);
  } else {
    s.partition = grid_partition(s.clouds, k, s.scene.bounds, cfg.partition.occupancy.resolution);
  }
}

void run_training(PipelineState& s) {
  require(s.partition.k > 0, ErrorCode::kInvalidArgument, "training needs a partition");
  s.fields.clear();
  for (int id = 0; id < s.partition.k; ++id) {
    const FieldParams init = init_field(s.config.field, s.scene.bounds, s.config.train.seed + 101 * id);
    const auto images = member_images(s, id);
    if (images.empty()) {
      s.fields.push_back(init);
      continue;
    }
    TrainConfig tc = s.config.train;
    tc.seed += 101 * id;
    s.fields.push_back(train(init, images, tc).params);
  }
}

void run_selection(PipelineState& s) {
  require(!s.fields.empty(), ErrorCode::kInvalidArgument, "selection needs trained fields");
  const auto& sel = s.config.selection;
  const int d = s.config.field.feature_dim();
  s.masks.clear();
  for (int id = 0; id < static_cast<int>(s.fields.size()); ++id) {
    if (!sel.enabled) {
      s.masks.push_back(SelectionMask::all(d, sel.mode));
      continue;
    }
    const auto members = s.partition.members(id);
    if (members.empty()) {
      s.masks.push_back(SelectionMask::all(d, sel.mode));
      continue;
    }
    std::vector<MatchPairSet> sets;
    const int views = std::min<int>(sel.views, static_cast<int>(members.size()));
    for (int v = 0; v < views; ++v) {
      const int m = members[static_cast<std::size_t>(v * static_cast<int>(members.size()) / views)];
      try {
        sets.push_back(generate_gt_pairs(s.fields[static_cast<std::size_t>(id)],
                                         s.train_images[static_cast<std::size_t>(m)].pose, s.intrinsics, sel.pairs,
                                         s.config.seed * 1000003 + static_cast<std::uint64_t>(id) * 1009 + v));
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kInsufficientOverlap) throw;
      }
    }
    require(!sets.empty(), ErrorCode::kInsufficientOverlap,
            "no view of field " + std::to_string(id) + " produced enough ground-truth pairs");
    PerDimCost cost = accumulate_costs(sets, sel.metric);
    if (sel.normalization == CostNormalization::kDispersion) cost = normalize_by_dispersion(cost, sets);
    s.masks.push_back(solve_selection(cost, sel.budget, sel.mode));
  }
}

void run_coarse(PipelineState& s) {
  std::vector<Pose> poses;
  std::vector<RgbImage> images;
  for (const auto& im : s.train_images) {
    poses.push_back(im.pose);
    images.push_back(im.image);
  }
  s.groups = two_stage_cluster(poses, s.config.coarse.k_spatial, s.config.coarse.k_orient, s.config.seed);
  std::vector<int> labels(poses.size(), 0);
  for (const auto& g : s.groups)
    for (int m : g.members) labels[static_cast<std::size_t>(m)] = g.id;
  s.place = train_place_predictor(images, labels, static_cast<int>(s.groups.size()), s.config.coarse.place).predictor;
}

void run_projectors(PipelineState& s) {
  require(!s.fields.empty(), ErrorCode::kInvalidArgument, "projectors need trained fields");
  s.projectors.clear();
  for (int id = 0; id < static_cast<int>(s.fields.size()); ++id) {
    const auto images = member_images(s, id);
    ProjectorConfig pc = s.config.projector;
    pc.stride = s.config.match.stride;
    pc.seed += 101 * id;
    if (images.empty()) {
      s.projectors.push_back(make_projector(s.config.field.feature_dim(), s.intrinsics.width, s.intrinsics.height,
                                            pc.stride, pc.seed));
      continue;
    }
    s.projectors.push_back(train_projector(s.fields[static_cast<std::size_t>(id)], images, pc).params);
  }
}

std::vector<QueryResult> localize(const PipelineState& s, const LocalizeOptions& opt) {
  require(!s.fields.empty() && !s.groups.empty() && s.place.trained, ErrorCode::kUntrained,
          "localization needs fields and a trained place predictor");
  const auto& cfg = s.config;
  const QueryFeatureSource source = opt.query_features.value_or(cfg.match.query_features);
  if (source == QueryFeatureSource::kProjector)
    require(s.projectors.size() == s.fields.size(), ErrorCode::kUntrained, "projector mode needs trained projectors");
  if (!opt.correspondence_dir.empty()) std::filesystem::create_directories(opt.correspondence_dir);
  std::vector<QueryResult> out;
  for (std::size_t qi = 0; qi < s.query_images.size(); ++qi) {
    const PosedImage& query = s.query_images[qi];
    QueryResult r;
    r.query_id = static_cast<int>(qi);
    const auto t_query = Clock::now();

    auto t0 = Clock::now();
    const PlacePrediction pred = predict_place(s.place, query.image);
    const PoseGroup& group = s.groups[static_cast<std::size_t>(pred.group)];
    const Pose init = initial_pose(group);
    r.coarse_group = group.id;
    r.nerf_id = s.partition.nerf_id[static_cast<std::size_t>(group.representative_id)];
    const FieldParams& field = s.fields[static_cast<std::size_t>(r.nerf_id)];
    const SelectionMask mask = opt.mask ? *opt.mask
                               : s.masks.empty() ? SelectionMask::all(cfg.field.feature_dim())
                                                 : s.masks[static_cast<std::size_t>(r.nerf_id)];
    r.times.coarse = seconds_since(t0);

    t0 = Clock::now();
    RenderOptions ro;
    ro.stride = cfg.match.stride;
    ro.samples_per_ray = cfg.match.samples_per_ray;
    ro.selection = mask;
    ro.color = false;
    const LiftedCloud cloud = lift_to_3d(render_map(field, init, s.intrinsics, ro), cfg.match.opacity_threshold);
    r.times.feature_render = seconds_since(t0);

    t0 = Clock::now();
    const QueryFeatureMap qf =
        source == QueryFeatureSource::kOracle
            ? oracle_query_features(field, query.pose, s.intrinsics, cfg.match.stride, mask, cfg.match.samples_per_ray,
                                    r.query_id)
            : extract_query_features(query.image, s.projectors[static_cast<std::size_t>(r.nerf_id)], mask, r.query_id);
    r.times.query_features = seconds_since(t0);

    t0 = Clock::now();
    Correspondences corrs = match(qf, cloud);
    r.times.match = seconds_since(t0);
    r.num_matches = corrs.size();
    if (!opt.correspondence_dir.empty())
      save_correspondences(opt.correspondence_dir / ("query_" + std::to_string(qi) + ".csv"), corrs);

    // Solve in the frame of the initial camera.
    t0 = Clock::now();
    const Mat3 rt = init.rotation.transpose();
    for (auto& c : corrs.items) c.point = rt * (c.point - init.translation);
    Pose estimate = init;
    try {
      RansacConfig rc = cfg.ransac;
      rc.seed += qi;
      const PoseEstimate est = ransac_pnp(corrs, s.intrinsics, rc);
      estimate = compose_with_initial(est, init);
      r.inliers = static_cast<int>(est.inliers.size());
      r.localized = true;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kLocalizationFailure && e.code() != ErrorCode::kInvalidArgument &&
          e.code() != ErrorCode::kDegenerateConfiguration)
        throw;
      r.failure = e.what();
    }
    r.times.pnp = seconds_since(t0);
    r.wall_clock = seconds_since(t_query);
    const PoseError err = pose_error(estimate, query.pose);
    r.translation_error = err.translation;
    r.rotation_error_deg = err.rotation_deg;
    out.push_back(std::move(r));
  }
  return out;
}

EvalReport evaluate(const PipelineState& s, std::vector<QueryResult> results, const std::string& query_features,
                    int feature_dims) {
  EvalReport rep;
  rep.query_features = query_features;
  rep.feature_dims = feature_dims;
  rep.scene_extent = s.scene.bounds.extent();
  rep.queries = std::move(results);
  double nn = 0.0;
  for (const auto& q : s.query_images) {
    const int id = heldout_field(s, q.pose);
    const RgbImage img = render_image(s.fields[static_cast<std::size_t>(id)], q.pose, q.intrinsics,
                                      s.config.train.samples_per_ray);
    rep.heldout_psnr.push_back(psnr(img, q.image));
    nn += num_nerf(q.pose, s.intrinsics, s.partition, s.config.partition.occupancy);
  }
  rep.avg_num_nerf = s.query_images.empty() ? 0.0 : nn / static_cast<double>(s.query_images.size());
  if (!s.clouds.empty()) rep.compactness_scatter = compactness(s.partition.nerf_id, s.partition.k, s.clouds).scatter;
  rep.stage_seconds = s.stage_seconds;
  for (const auto& [name, sec] : s.stage_seconds) rep.total_seconds += sec;
  rep.summarize();
  return rep;
}

void save_state(const PipelineState& s, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  io::write_text(dir / "config.json", encode_config(s.config));
  std::vector<Pose> tp, qp;
  for (const auto& im : s.train_images) tp.push_back(im.pose);
  for (const auto& im : s.query_images) qp.push_back(im.pose);
  save_trajectory(dir / "train_poses.traj", tp);
  save_trajectory(dir / "query_poses.traj", qp);
  if (s.partition.k > 0) save_partition(dir / "partition.json", s.partition);
  for (std::size_t i = 0; i < s.fields.size(); ++i)
    save_checkpoint(dir / ("field_" + std::to_string(i) + ".ckpt"), s.fields[i]);
  for (std::size_t i = 0; i < s.masks.size(); ++i)
    save_mask(dir / ("mask_" + std::to_string(i) + ".txt"), s.masks[i]);
  if (!s.groups.empty()) save_pose_groups(dir / "pose_groups.json", s.groups);
  if (s.place.trained) io::write_file(dir / "place.bin", encode_place_predictor(s.place));
  for (std::size_t i = 0; i < s.projectors.size(); ++i)
    save_projector(dir / ("projector_" + std::to_string(i) + ".bin"), s.projectors[i]);
}

PipelineState load_state(const PipelineConfig& cfg, const std::filesystem::path& dir) {
  PipelineState s = prepare(cfg);
  run_partition(s);
  const auto part = dir / "partition.json";
  if (std::filesystem::exists(part))
    require(load_partition(part).nerf_id == s.partition.nerf_id, ErrorCode::kConfig,
            "saved partition does not match the configuration");
  auto indexed = [&](const std::string& stem, const std::string& ext, int i) {
    return dir / (stem + "_" + std::to_string(i) + ext);
  };
  for (int i = 0; std::filesystem::exists(indexed("field", ".ckpt", i)); ++i)
    s.fields.push_back(load_checkpoint(indexed("field", ".ckpt", i)));
  for (int i = 0; std::filesystem::exists(indexed("mask", ".txt", i)); ++i)
    s.masks.push_back(load_mask(indexed("mask", ".txt", i)));
  for (int i = 0; std::filesystem::exists(indexed("projector", ".bin", i)); ++i)
    s.projectors.push_back(load_projector(indexed("projector", ".bin", i)));
  if (std::filesystem::exists(dir / "pose_groups.json")) s.groups = load_pose_groups(dir / "pose_groups.json");
  if (std::filesystem::exists(dir / "place.bin")) s.place = decode_place_predictor(io::read_file(dir / "place.bin"));
  if (!s.fields.empty())
    require(static_cast<int>(s.fields.size()) == s.partition.k, ErrorCode::kConfig,
            "checkpoint count does not match the partition");
  return s;
}

EvalReport run_pipeline(const PipelineConfig& cfg) {
  const auto t_start = Clock::now();
  PipelineState s;
  std::vector<QueryResult> results;
  EvalReport report;
  const auto dir = cfg.output_dir;
  auto stage = [&](const std::string& name, const std::function<void()>& body) {
    const auto t0 = Clock::now();
    try {
      body();
    } catch (const Error& e) {
      try {
        save_state(s, dir);
      } catch (const Error&) {
      }
      throw Error(e.code(), "stage " + name + ": " + e.what());
    }
    s.stage_seconds.emplace_back(name, seconds_since(t0));
    save_state(s, dir);
  };
  stage("prepare", [&] { s = prepare(cfg); });
  stage("partition", [&] { run_partition(s); });
  stage("train", [&] {
    run_training(s);
    if (cfg.match.query_features == QueryFeatureSource::kProjector) run_projectors(s);
  });
  stage("select", [&] { run_selection(s); });
  stage("coarse", [&] { run_coarse(s); });
  stage("localize", [&] {
    LocalizeOptions opt;
    opt.correspondence_dir = dir / "correspondences";
    results = localize(s, opt);
  });
  stage("evaluate", [&] {
    const int dims = cfg.selection.enabled ? s.masks.front().selected_count() : cfg.field.feature_dim();
    report = evaluate(s, results, to_string(cfg.match.query_features), dims);
  });
  report.stage_seconds = s.stage_seconds;
  report.total_seconds = seconds_since(t_start);
  write_report(dir, report);
  return report;
}

}  // namespace radloc
