// radloc: command-line driver for the localization pipeline.
//
// Every subcommand reads the configuration, loads the artifacts already in
// the output directory and writes back what it produced.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

#include "radloc/binary_io.hpp"
#include "radloc/errors.hpp"
#include "radloc/pipeline.hpp"

using namespace radloc;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

PipelineConfig make_config(const Globals& g) {
  PipelineConfig cfg = g.config.empty() ? parse_config("{}") : load_config(g.config);
  if (g.seed) cfg.reseed(*g.seed);
  if (!g.out.empty()) cfg.output_dir = g.out;
  cfg.validate();
  return cfg;
}

void print_report(const EvalReport& r) { std::cout << report_table(r); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Feature-matching localization inside trained radiance fields"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "pipeline configuration (JSON)")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "derive every stage seed from this value");
  app.add_option("--out", g.out, "output directory (overrides the configuration)");

  auto* partition = app.add_subcommand("partition", "assign training poses to sub-fields");
  auto* train = app.add_subcommand("train", "train one radiance field per partition");
  auto* select = app.add_subcommand("select", "select feature dimensions for each field");
  auto* coarse = app.add_subcommand("coarse", "cluster poses and train the place predictor");
  auto* localize_cmd = app.add_subcommand("localize", "localize every query image");
  auto* evaluate_cmd = app.add_subcommand("evaluate", "compute the evaluation report");
  auto* demo = app.add_subcommand("demo", "run every stage end to end");
  std::string features;
  localize_cmd->add_option("--features", features, "query features: oracle or projector");

  CLI11_PARSE(app, argc, argv);

  try {
    const PipelineConfig cfg = make_config(g);
    const auto dir = cfg.output_dir;
    if (demo->parsed()) {
      print_report(run_pipeline(cfg));
      return 0;
    }
    PipelineState s = load_state(cfg, dir);
    if (partition->parsed()) {
      save_state(s, dir);
      std::printf("partition: %d fields\n", s.partition.k);
      for (int id = 0; id < s.partition.k; ++id)
        std::printf("  field %d: %zu poses\n", id, s.partition.members(id).size());
    } else if (train->parsed()) {
      run_training(s);
      if (cfg.match.query_features == QueryFeatureSource::kProjector) run_projectors(s);
      save_state(s, dir);
      std::printf("trained %zu fields\n", s.fields.size());
    } else if (select->parsed()) {
      run_selection(s);
      save_state(s, dir);
      for (std::size_t i = 0; i < s.masks.size(); ++i) std::printf("field %zu: %s", i, encode_mask(s.masks[i]).c_str());
    } else if (coarse->parsed()) {
      run_coarse(s);
      save_state(s, dir);
      std::printf("%zu pose groups\n", s.groups.size());
    } else if (localize_cmd->parsed()) {
      LocalizeOptions opt;
      if (!features.empty()) opt.query_features = query_feature_source_from_string(features);
      opt.correspondence_dir = dir / "correspondences";
      const auto source = opt.query_features.value_or(cfg.match.query_features);
      EvalReport partial;
      partial.queries = localize(s, opt);
      partial.query_features = to_string(source);
      partial.feature_dims = s.masks.empty() ? cfg.field.feature_dim() : s.masks.front().selected_count();
      partial.scene_extent = s.scene.bounds.extent();
      partial.summarize();
      io::write_text(dir / "localize.json", encode_report(partial));
      print_report(partial);
    } else if (evaluate_cmd->parsed()) {
      const EvalReport partial = decode_report(io::read_text(dir / "localize.json"));
      const EvalReport report = evaluate(s, partial.queries, partial.query_features, partial.feature_dims);
      write_report(dir, report);
      print_report(report);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
