#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "radloc/config.hpp"
#include "radloc/errors.hpp"
#include "radloc/pipeline.hpp"
#include "radloc/report.hpp"

using namespace radloc;

namespace {

RgbImage filled(int w, int h, double v) {
  RgbImage img(w, h);
  std::fill(img.data.begin(), img.data.end(), v);
  return img;
}

// Small enough to run the whole pipeline in a few seconds.
PipelineConfig tiny(const std::filesystem::path& dir) {
  PipelineConfig cfg;
  cfg.scene.train_poses = 16;
  cfg.scene.query_poses = 2;
  cfg.scene.width = cfg.scene.height = 16;
  cfg.train.steps = 40;
  cfg.train.batch_rays = 64;
  cfg.train.samples_per_ray = 16;
  cfg.partition.poses_per_field = 8;
  cfg.selection.views = 2;
  cfg.selection.pairs.min_pairs = 1;
  cfg.selection.pairs.samples_per_ray = 16;
  cfg.match.samples_per_ray = 16;
  cfg.coarse.k_spatial = 2;
  cfg.coarse.place.epochs = 3;
  cfg.coarse.place.embedding_dim = 8;
  cfg.output_dir = dir;
  return cfg;
}

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(dir);
  return dir;
}

}  // namespace

TEST_CASE("psnr") {
  const RgbImage a = filled(4, 3, 0.25);
  CHECK(std::isinf(psnr(a, a)));
  CHECK(psnr(filled(4, 3, 0.5), filled(4, 3, 0.0)) == doctest::Approx(10.0 * std::log10(4.0)));
  CHECK(psnr(filled(4, 3, 1.0), filled(4, 3, 0.0)) == doctest::Approx(0.0));
  RgbImage b = a;
  b.data[0] += 0.6;  // MSE 0.36 / 36
  CHECK(psnr(b, a) == doctest::Approx(20.0).epsilon(1e-12));
  CHECK_THROWS_AS(psnr(a, filled(3, 4, 0.25)), Error);
}

TEST_CASE("config parsing") {
  const PipelineConfig def;
  CHECK(encode_config(parse_config("{}")) == encode_config(def));

  PipelineConfig cfg = parse_config(R"({"train": {"steps": 7, "random_background": false},
                                        "selection": {"budget": 3, "mode": "as-written"},
                                        "match": {"query_features": "projector"}})");
  CHECK(cfg.train.steps == 7);
  CHECK(!cfg.train.random_background);
  CHECK(cfg.selection.budget == 3);
  CHECK(cfg.selection.mode == SelectionMode::kAsWritten);
  CHECK(cfg.match.query_features == QueryFeatureSource::kProjector);
  CHECK(encode_config(parse_config(encode_config(cfg))) == encode_config(cfg));

  for (const char* bad : {R"({"train": {"stpes": 7}})", R"({"extra": {}})", R"({"train": {"steps": "many"}})",
                          R"({"match": {"query_features": "telepathy"}})", "not json"}) {
    try {
      parse_config(bad);
      FAIL("accepted " << bad);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kConfig);
    }
  }

  cfg = def;
  cfg.reseed(5);
  PipelineConfig again = def;
  again.reseed(5);
  CHECK(encode_config(cfg) == encode_config(again));
  again.reseed(6);
  CHECK(encode_config(cfg) != encode_config(again));
}

TEST_CASE("report round trip and summary") {
  EvalReport r;
  r.query_features = "oracle";
  r.feature_dims = 10;
  r.scene_extent = 20.0;
  for (int i = 0; i < 5; ++i) {
    QueryResult q;
    q.query_id = i;
    q.localized = i != 2;
    q.failure = q.localized ? "" : "localization failure";
    q.translation_error = 0.1 * (i + 1);
    q.rotation_error_deg = 1.0 / 3.0 * i;
    q.times.coarse = 0.001 * i;
    q.times.pnp = 0.002;
    q.wall_clock = 0.01;
    r.queries.push_back(q);
  }
  r.heldout_psnr = {30.0, std::numeric_limits<double>::infinity(), 20.0};
  r.stage_seconds = {{"prepare", 0.5}, {"train", 2.0}};
  r.summarize();
  CHECK(r.localized == 4);
  CHECK(r.failed == 1);
  // Localized translations 0.1, 0.2, 0.4, 0.5.
  CHECK(r.median_translation_error == doctest::Approx(0.3));
  CHECK(r.median_rotation_error_deg == doctest::Approx((1.0 / 3.0 + 1.0) / 2.0));
  CHECK(r.mean_heldout_psnr == doctest::Approx(25.0));

  const EvalReport back = decode_report(encode_report(r));
  CHECK(encode_report(back) == encode_report(r));
  CHECK(std::isinf(back.heldout_psnr[1]));
  CHECK(back.queries[3].rotation_error_deg == r.queries[3].rotation_error_deg);
  CHECK(back.queries[2].failure == "localization failure");
  CHECK_THROWS_AS(decode_report("{\"version\": 99}"), Error);

  const auto rows = timing_breakdown(r);
  REQUIRE(rows.back().stage == "total");
  double parts = 0.0;
  for (std::size_t i = 0; i + 1 < rows.size(); ++i) parts += rows[i].seconds;
  CHECK(parts <= rows.back().seconds);
  CHECK(rows.back().seconds == doctest::Approx(0.05));
  CHECK(timing_csv(rows).rfind("stage,seconds\n", 0) == 0);
  CHECK(report_table(r).find("median") != std::string::npos);
}

TEST_CASE("tiny pipeline end to end") {
  const auto dir = scratch("radloc_harness_tiny");
  const PipelineConfig cfg = tiny(dir);
  const EvalReport rep = run_pipeline(cfg);
  CHECK(rep.queries.size() == 2);
  CHECK(rep.localized + rep.failed == 2);
  CHECK(rep.scene_extent == doctest::Approx(20.0));
  CHECK(rep.heldout_psnr.size() == 2);
  CHECK(rep.avg_num_nerf >= 1.0);
  std::vector<std::string> names;
  for (const auto& [n, sec] : rep.stage_seconds) {
    names.push_back(n);
    CHECK(sec >= 0.0);
  }
  CHECK(names == std::vector<std::string>{"prepare", "partition", "train", "select", "coarse", "localize", "evaluate"});
  for (const auto& q : rep.queries) {
    const double parts = q.times.coarse + q.times.feature_render + q.times.query_features + q.times.match + q.times.pnp;
    CHECK(parts <= q.wall_clock + 1e-9);
  }
  for (const char* f : {"config.json", "partition.json", "field_0.ckpt", "field_1.ckpt", "train_poses.traj",
                        "mask_0.txt", "pose_groups.json",
                        "place.bin", "report.json", "report.txt", "timing.csv"})
    CHECK_MESSAGE(std::filesystem::exists(dir / f), f);
  CHECK(decode_report([&] {
          std::ifstream in(dir / "report.json");
          return std::string(std::istreambuf_iterator<char>(in), {});
        }()).queries.size() == 2);

  // Same config, same numbers.
  const auto dir2 = scratch("radloc_harness_tiny2");
  PipelineConfig cfg2 = cfg;
  cfg2.output_dir = dir2;
  const EvalReport rep2 = run_pipeline(cfg2);
  for (std::size_t i = 0; i < rep.queries.size(); ++i) {
    CHECK(rep2.queries[i].localized == rep.queries[i].localized);
    CHECK(rep2.queries[i].translation_error == rep.queries[i].translation_error);
    CHECK(rep2.queries[i].rotation_error_deg == rep.queries[i].rotation_error_deg);
  }
  CHECK(rep2.heldout_psnr == rep.heldout_psnr);

  // Reloading the saved state reproduces the localization.
  const PipelineState s = load_state(cfg, dir);
  CHECK(s.fields.size() == 2);
  const auto again = localize(s);
  for (std::size_t i = 0; i < again.size(); ++i) CHECK(again[i].translation_error == rep.queries[i].translation_error);

  std::filesystem::remove_all(dir);
  std::filesystem::remove_all(dir2);
}

TEST_CASE("a failing stage is named and keeps earlier artifacts") {
  const auto dir = scratch("radloc_harness_fail");
  PipelineConfig cfg = tiny(dir);
  cfg.selection.pairs.min_pairs = 1000000;  // more pairs than pixels
  try {
    run_pipeline(cfg);
    FAIL("expected the selection stage to fail");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kInsufficientOverlap);
    CHECK(std::string(e.what()).find("stage select") != std::string::npos);
  }
  CHECK(std::filesystem::exists(dir / "partition.json"));
  CHECK(std::filesystem::exists(dir / "field_0.ckpt"));
  CHECK(!std::filesystem::exists(dir / "mask_0.txt"));
  CHECK(!std::filesystem::exists(dir / "report.json"));

  // Rejected before any stage runs.
  cfg = tiny(dir);
  cfg.coarse.k_spatial = 1000;
  CHECK_THROWS_AS(run_pipeline(cfg), Error);
  std::filesystem::remove_all(dir);
}
