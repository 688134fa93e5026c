#include "radloc/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "radloc/binary_io.hpp"
#include "radloc/errors.hpp"

namespace radloc {

using nlohmann::json;

namespace {

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// JSON has no infinities or NaNs; they are written as strings.
json number(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  return x;
}

double read_number(const json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    fail(ErrorCode::kIo, "bad number in report: " + s);
  }
  return j.get<double>();
}

}  // namespace

double psnr(const RgbImage& rendered, const RgbImage& truth) {
  require(rendered.width == truth.width && rendered.height == truth.height &&
              rendered.data.size() == truth.data.size(),
          ErrorCode::kInvalidArgument, "psnr: image dimensions differ");
  require(!truth.data.empty(), ErrorCode::kInvalidArgument, "psnr: empty image");
  double se = 0.0;
  for (std::size_t i = 0; i < truth.data.size(); ++i) {
    const double d = static_cast<double>(rendered.data[i]) - static_cast<double>(truth.data[i]);
    se += d * d;
  }
  if (se == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(static_cast<double>(truth.data.size()) / se);
}

void EvalReport::summarize() {
  std::vector<double> t, r;
  localized = failed = 0;
  for (const auto& q : queries) {
    if (q.localized) {
      ++localized;
      t.push_back(q.translation_error);
      r.push_back(q.rotation_error_deg);
    } else {
      ++failed;
    }
  }
  median_translation_error = median(t);
  median_rotation_error_deg = median(r);
  double s = 0.0;
  int finite = 0;
  for (double p : heldout_psnr)
    if (std::isfinite(p)) {
      s += p;
      ++finite;
    }
  mean_heldout_psnr = finite ? s / finite : std::numeric_limits<double>::infinity();
}

std::vector<TimingRow> timing_breakdown(const EvalReport& report) {
  StageTimes sum;
  double total = 0.0;
  for (const auto& q : report.queries) {
    sum.coarse += q.times.coarse;
    sum.feature_render += q.times.feature_render;
    sum.query_features += q.times.query_features;
    sum.match += q.times.match;
    sum.pnp += q.times.pnp;
    total += q.wall_clock;
  }
  return {{"coarse_predict", sum.coarse},
          {"feature_render", sum.feature_render},
          {"query_features", sum.query_features},
          {"match", sum.match},
          {"ransac_pnp", sum.pnp},
          {"total", total}};
}

std::string timing_csv(const std::vector<TimingRow>& rows) {
  std::string out = "stage,seconds\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.6f", r.seconds);
    out += r.stage + "," + buf + "\n";
  }
  return out;
}

std::string encode_report(const EvalReport& r) {
  json qs = json::array();
  for (const auto& q : r.queries)
    qs.push_back({{"query_id", q.query_id},
                  {"localized", q.localized},
                  {"failure", q.failure},
                  {"coarse_group", q.coarse_group},
                  {"nerf_id", q.nerf_id},
                  {"translation_error", number(q.translation_error)},
                  {"rotation_error_deg", number(q.rotation_error_deg)},
                  {"num_matches", q.num_matches},
                  {"inliers", q.inliers},
                  {"wall_clock", q.wall_clock},
                  {"times",
                   {{"coarse", q.times.coarse},
                    {"feature_render", q.times.feature_render},
                    {"query_features", q.times.query_features},
                    {"match", q.times.match},
                    {"pnp", q.times.pnp}}}});
  json psnrs = json::array();
  for (double p : r.heldout_psnr) psnrs.push_back(number(p));
  json stages = json::array();
  for (const auto& [name, s] : r.stage_seconds) stages.push_back({{"stage", name}, {"seconds", s}});
  const json j = {{"version", EvalReport::kVersion},
                  {"query_features", r.query_features},
                  {"feature_dims", r.feature_dims},
                  {"scene_extent", r.scene_extent},
                  {"localized", r.localized},
                  {"failed", r.failed},
                  {"median_translation_error", number(r.median_translation_error)},
                  {"median_rotation_error_deg", number(r.median_rotation_error_deg)},
                  {"heldout_psnr", psnrs},
                  {"mean_heldout_psnr", number(r.mean_heldout_psnr)},
                  {"avg_num_nerf", r.avg_num_nerf},
                  {"compactness_scatter", r.compactness_scatter},
                  {"stage_seconds", stages},
                  {"total_seconds", r.total_seconds},
                  {"queries", qs}};
  return j.dump(2) + "\n";
}

EvalReport decode_report(const std::string& text) {
  try {
    const json j = json::parse(text);
    require(j.at("version").get<int>() == EvalReport::kVersion, ErrorCode::kIo, "unsupported report version");
    EvalReport r;
    r.query_features = j.at("query_features").get<std::string>();
    r.feature_dims = j.at("feature_dims").get<int>();
    r.scene_extent = j.at("scene_extent").get<double>();
    r.localized = j.at("localized").get<int>();
    r.failed = j.at("failed").get<int>();
    r.median_translation_error = read_number(j.at("median_translation_error"));
    r.median_rotation_error_deg = read_number(j.at("median_rotation_error_deg"));
    for (const auto& p : j.at("heldout_psnr")) r.heldout_psnr.push_back(read_number(p));
    r.mean_heldout_psnr = read_number(j.at("mean_heldout_psnr"));
    r.avg_num_nerf = j.at("avg_num_nerf").get<double>();
    r.compactness_scatter = j.at("compactness_scatter").get<double>();
    for (const auto& s : j.at("stage_seconds"))
      r.stage_seconds.emplace_back(s.at("stage").get<std::string>(), s.at("seconds").get<double>());
    r.total_seconds = j.at("total_seconds").get<double>();
    for (const auto& e : j.at("queries")) {
      QueryResult q;
      q.query_id = e.at("query_id").get<int>();
      q.localized = e.at("localized").get<bool>();
      q.failure = e.at("failure").get<std::string>();
      q.coarse_group = e.at("coarse_group").get<int>();
      q.nerf_id = e.at("nerf_id").get<int>();
      q.translation_error = read_number(e.at("translation_error"));
      q.rotation_error_deg = read_number(e.at("rotation_error_deg"));
      q.num_matches = e.at("num_matches").get<int>();
      q.inliers = e.at("inliers").get<int>();
      q.wall_clock = e.at("wall_clock").get<double>();
      const auto& t = e.at("times");
      q.times.coarse = t.at("coarse").get<double>();
      q.times.feature_render = t.at("feature_render").get<double>();
      q.times.query_features = t.at("query_features").get<double>();
      q.times.match = t.at("match").get<double>();
      q.times.pnp = t.at("pnp").get<double>();
      r.queries.push_back(std::move(q));
    }
    return r;
  } catch (const json::exception& e) {
    fail(ErrorCode::kIo, std::string("bad report: ") + e.what());
  }
}

std::string report_table(const EvalReport& r) {
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof buf, "query features: %s, %d dims, scene extent %.2f\n", r.query_features.c_str(),
                r.feature_dims, r.scene_extent);
  os << buf;
  os << "query  ok  group  nerf  matches  inliers  trans_err  rot_err_deg  seconds\n";
  for (const auto& q : r.queries) {
    std::snprintf(buf, sizeof buf, "%5d  %2s  %5d  %4d  %7d  %7d  %9.4f  %11.4f  %7.3f\n", q.query_id,
                  q.localized ? "y" : "n", q.coarse_group, q.nerf_id, q.num_matches, q.inliers, q.translation_error,
                  q.rotation_error_deg, q.wall_clock);
    os << buf;
  }
  std::snprintf(buf, sizeof buf, "localized %d, failed %d\nmedian translation error %.4f, median rotation error %.4f deg\n",
                r.localized, r.failed, r.median_translation_error, r.median_rotation_error_deg);
  os << buf;
  std::snprintf(buf, sizeof buf, "mean held-out PSNR %.2f dB, avg num_nerf %.3f, compactness scatter %.3f\n",
                r.mean_heldout_psnr, r.avg_num_nerf, r.compactness_scatter);
  os << buf;
  for (const auto& [name, s] : r.stage_seconds) {
    std::snprintf(buf, sizeof buf, "stage %-10s %9.2f s\n", name.c_str(), s);
    os << buf;
  }
  std::snprintf(buf, sizeof buf, "total %.2f s\n", r.total_seconds);
  os << buf;
  return os.str();
}

void write_report(const std::filesystem::path& dir, const EvalReport& report) {
  std::filesystem::create_directories(dir);
  io::write_text(dir / "report.json", encode_report(report));
  io::write_text(dir / "report.txt", report_table(report));
  io::write_text(dir / "timing.csv", timing_csv(timing_breakdown(report)));
}

}  // namespace radloc
