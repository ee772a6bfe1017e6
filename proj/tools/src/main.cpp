// cmce: command-line front end for synthetic data generation, transform
// training, fusion, evaluation and the scenario suite.

#include <cstdint>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cmce/cli/commands.hpp"
#include "cmce/cli/experiment.hpp"
#include "cmce/cli/scenario.hpp"
#include "cmce/error.hpp"

namespace {

using namespace cmce;
using namespace cmce::cli;

struct Globals {
  std::string config_path;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::size_t threads = 1;
  bool force = false;
};

ExperimentConfig load(const Globals& g) {
  ExperimentConfig cfg = g.config_path.empty() ? default_config() : load_config(g.config_path);
  if (!g.out.empty()) cfg.output_dir = g.out;
  if (g.seed) cfg.master_seed = *g.seed;
  return cfg;
}

void print_scenario(const ScenarioResult& r) {
  std::printf("%s (config %s)\n", r.scenario.c_str(), r.config_hash.c_str());
  for (const auto& [k, v] : r.values) {
    if (k.x_kind == "coverage") continue;
    std::printf("  %-22s %-18s %-8s %-6.3g %.4f\n", k.arm.c_str(), k.metric.c_str(),
                k.x_kind.c_str(), k.x, r.mean(k));
  }
  if (r.scenario == "model_update") {
    std::printf("  backfill embeds of gallery samples by the new query model: %zu\n",
                r.backfill_violations);
  }
}

int run(int argc, char** argv) {
  CLI::App app{"Cross-model compatible ensembles for asymmetric retrieval"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config_path, "Experiment config (JSON)");
  app.add_option("--out", g.out, "Output directory (overrides output_dir)");
  app.add_option("--seed", g.seed, "Master seed (overrides master_seed)");
  app.add_option("--threads", g.threads, "Worker threads for scenario seeds")->check(CLI::PositiveNumber);
  app.add_flag("--force", g.force, "Overwrite artifacts written under a different config");

  auto* synth = app.add_subcommand("synth-gen", "Write synthetic embedding sets for every model and split");

  auto* trainc = app.add_subcommand("train-transform", "Train one transformation toward the query model");
  std::string variant = "m2m";
  std::vector<std::string> gallery_models;
  std::uint64_t world_seed = 0;
  std::size_t tag = 0;
  trainc->add_option("--variant", variant, "m2m, unified, e2e_mean, e2e_weighted or concat");
  trainc->add_option("--gallery", gallery_models, "Gallery model ids")->required()->delimiter(',');
  trainc->add_option("--world-seed", world_seed, "World seed (default: first of world_seeds)");
  trainc->add_option("--tag", tag, "Training-seed tag of an m2m transform");

  auto* fuse = app.add_subcommand("fuse", "Fuse transformed gallery sets into an ensemble gallery");
  std::vector<std::string> transforms, gallery_sets;
  std::string query_id = "query";
  std::string fuse_dir;
  fuse->add_option("--transform", transforms, "Transform parameter files")->required();
  fuse->add_option("--gallery-set", gallery_sets, "Gallery embedding sets, one per transform")->required();
  fuse->add_option("--query-id", query_id, "Query model id recorded in the fused gallery");
  fuse->add_option("--dir", fuse_dir, "Output directory (default <out>/fused)");

  auto* evalc = app.add_subcommand("eval", "Evaluate stored gallery and probe files");
  std::string arm_dir;
  EvalInputs in;
  std::vector<double> fars;
  evalc->add_option("--arm", arm_dir, "Arm directory written by a scenario");
  evalc->add_option("--gallery", in.gallery, "Fused gallery binary");
  evalc->add_option("--sidecar", in.sidecar, "Fused gallery sidecar JSON");
  evalc->add_option("--mated", in.mated, "Mated probe set");
  evalc->add_option("--nonmated", in.nonmated, "Nonmated probe set");
  evalc->add_option("--query-transform", in.query_transform, "Query-side transform to apply to probes");
  evalc->add_option("--far", fars, "FAR targets (default from config)");

  auto* scen = app.add_subcommand("scenario", "Run a scenario: ensemble_size, diversity, "
                                              "fusion_variants, risk_coverage, model_update or all");
  std::string scenario_name;
  scen->add_option("name", scenario_name, "Scenario name")->required();

  auto* report = app.add_subcommand("report", "Summarize every scenario report under --out");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  const ExperimentConfig cfg = load(g);
  RunOptions opts;
  opts.threads = g.threads;
  opts.force = g.force;

  if (synth->parsed()) {
    const auto files = generate_synthetic(cfg, opts);
    std::printf("wrote %zu files under %s/synth\n", files.size(), cfg.output_dir.c_str());
  } else if (trainc->parsed()) {
    const std::uint64_t ws = trainc->count("--world-seed") ? world_seed : cfg.world_seeds.front();
    const auto path = train_transform_artifact(cfg, parse_variant(variant), gallery_models, ws, tag, opts);
    std::printf("%s\n", path.string().c_str());
  } else if (fuse->parsed()) {
    const std::filesystem::path dir =
        fuse_dir.empty() ? std::filesystem::path(cfg.output_dir) / "fused" : std::filesystem::path(fuse_dir);
    const auto items = cmd_fuse(transforms, gallery_sets, query_id, dir, cfg.eval.variance_metric);
    std::printf("fused %zu items into %s\n", items.size(), dir.string().c_str());
  } else if (evalc->parsed()) {
    if (!arm_dir.empty()) {
      const EvalInputs a = arm_inputs(arm_dir);
      if (in.gallery.empty()) in.gallery = a.gallery;
      if (in.sidecar.empty()) in.sidecar = a.sidecar;
      if (in.mated.empty()) in.mated = a.mated;
      if (in.nonmated.empty()) in.nonmated = a.nonmated;
    }
    if (in.gallery.empty() || in.mated.empty() || in.nonmated.empty()) {
      throw InvalidConfig("eval needs --arm or --gallery, --mated and --nonmated");
    }
    if (in.sidecar.empty()) {
      in.sidecar = std::filesystem::path(in.gallery).replace_extension(".json").string();
    }
    EvalSpec spec = cfg.eval;
    if (!fars.empty()) spec.far_targets = fars;
    const std::filesystem::path dir = std::filesystem::path(cfg.output_dir) / "eval";
    std::filesystem::create_directories(dir);
    const Report r = cmd_eval(in, spec, (dir / "report").string());
    for (const auto& row : r.rows) {
      std::printf("%-18s %-5s %-6.3g %.6f\n", row.curve.c_str(), row.x_kind.c_str(), row.x, row.value);
    }
  } else if (scen->parsed()) {
    if (scenario_name == "all") {
      for (ScenarioName n : all_scenarios()) print_scenario(run_scenario(n, cfg, opts));
    } else {
      print_scenario(run_scenario(parse_scenario(scenario_name), cfg, opts));
    }
  } else if (report->parsed()) {
    std::fputs(cmd_report(cfg.output_dir).c_str(), stdout);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const cmce::Error& e) {
    std::fprintf(stderr, "error (%s): %s\n", cmce::to_string(e.kind()), e.what());
    return e.kind() == cmce::ErrorKind::kInvalidConfig ? 2 : 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
