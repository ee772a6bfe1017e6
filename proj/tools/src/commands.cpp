#include "cmce/cli/commands.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "cmce/embedding_io.hpp"
#include "cmce/error.hpp"
#include "cmce/param_io.hpp"

namespace cmce::cli {

namespace fs = std::filesystem;

std::vector<FusedGalleryItem> cmd_fuse(const std::vector<std::string>& transform_paths,
                                       const std::vector<std::string>& gallery_paths,
                                       const std::string& query_model_id,
                                       const fs::path& out_dir, DistanceMetric metric) {
  if (transform_paths.empty()) throw InvalidConfig("fuse needs at least one transform");
  std::vector<EmbeddingSet> gallery;
  for (const auto& p : gallery_paths) gallery.push_back(read_embedding_set(p));
  std::vector<EmbeddingSet> transformed;
  if (transform_paths.size() == 1 && gallery.size() > 1) {
    const TrainedTransform t = read_transform(transform_paths.front());
    transformed.push_back(quantize_f32(t.apply_gallery(gallery, to_string(t.variant))));
  } else {
    if (transform_paths.size() != gallery.size()) {
      throw InvalidConfig("give one gallery set per transform");
    }
    for (std::size_t i = 0; i < gallery.size(); ++i) {
      const TrainedTransform t = read_transform(transform_paths[i]);
      transformed.push_back(quantize_f32(
          t.apply_gallery({gallery[i]}, fs::path(transform_paths[i]).stem().string())));
    }
  }
  auto items = fuse_gallery(transformed, metric);
  for (auto& it : items) {
    it.fused = quantize_f32(it.fused);
    it.degenerate = it.fused.norm() <= kNormEpsilon;
  }
  fs::create_directories(out_dir);
  write_fused_gallery(items, query_model_id, (out_dir / "gallery.cmce").string(),
                      (out_dir / "gallery.json").string());
  return items;
}

EvalInputs arm_inputs(const fs::path& arm_dir) {
  return {(arm_dir / "gallery.cmce").string(), (arm_dir / "gallery.json").string(),
          (arm_dir / "mated.cmce").string(), (arm_dir / "nonmated.cmce").string(), ""};
}

Report cmd_eval(const EvalInputs& in, const EvalSpec& eval, const std::string& out_stem) {
  ArmData arm;
  arm.gallery = read_fused_gallery(in.gallery, in.sidecar);
  arm.mated = read_embedding_set(in.mated);
  arm.nonmated = read_embedding_set(in.nonmated);
  if (!in.query_transform.empty()) {
    const TrainedTransform t = read_transform(in.query_transform);
    arm.mated = quantize_f32(t.apply_query(arm.mated));
    arm.nonmated = quantize_f32(t.apply_query(arm.nonmated));
  }
  const std::size_t dim = arm.gallery.front().fused.dim();
  if (arm.mated.dim() != dim || arm.nonmated.dim() != dim) {
    throw DimensionMismatch("gallery dim " + std::to_string(dim) + " but probes have dims " +
                            std::to_string(arm.mated.dim()) + " and " +
                            std::to_string(arm.nonmated.dim()));
  }

  Report r;
  r.config["gallery"] = in.gallery;
  r.config["mated"] = in.mated;
  r.config["nonmated"] = in.nonmated;
  r.config["far_targets"] = eval.far_targets;
  r.config["tool_version"] = kToolVersion;
  for (const auto& mv : evaluate_arm(arm, eval, "eval")) {
    r.rows.push_back({mv.key.metric, mv.key.x_kind, mv.key.x, mv.value, "mean", 1});
  }
  if (!out_stem.empty()) export_report(r, out_stem);
  return r;
}

std::string cmd_report(const fs::path& out_dir) {
  if (!fs::is_directory(out_dir)) throw IoError("'" + out_dir.string() + "' is not a directory");
  std::vector<fs::path> reports;
  for (const auto& e : fs::directory_iterator(out_dir)) {
    const fs::path p = e.path() / "report.json";
    if (e.is_directory() && fs::exists(p)) reports.push_back(p);
  }
  std::sort(reports.begin(), reports.end());
  if (reports.empty()) throw IoError("no report.json under '" + out_dir.string() + "'");

  Report summary;
  std::ostringstream table;
  char line[256];
  for (const auto& path : reports) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    const Report r = parse_report_json(ss.str());
    const std::string name = r.config.value("scenario", path.parent_path().filename().string());
    summary.config[name] = r.config.value("config_hash", std::string());
    for (const auto& row : r.rows) {
      if (row.policy == "world_seed" || row.curve.find("/w") != std::string::npos) continue;
      ReportRow s = row;
      s.curve = name + ":" + row.curve;
      summary.rows.push_back(s);
      std::snprintf(line, sizeof line, "%-48s %-9s %-8.4g %-10s %.4f\n", s.curve.c_str(),
                    s.x_kind.c_str(), s.x, s.policy.c_str(), s.value);
      table << line;
    }
  }
  std::ofstream out(out_dir / "summary.csv", std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write summary.csv");
  out << report_csv(summary);
  return table.str();
}

}  // namespace cmce::cli
