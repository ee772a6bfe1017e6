#pragma once

// Scenario runners: generate -> train transforms -> fuse -> evaluate -> export,
// repeated over every world seed of the config.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cmce/cli/experiment.hpp"
#include "cmce/ensemble.hpp"
#include "cmce/evalproto.hpp"

namespace cmce::cli {

enum class ScenarioName { kEnsembleSize, kDiversity, kFusionVariants, kRiskCoverage, kModelUpdate };

std::string to_string(ScenarioName s);
ScenarioName parse_scenario(const std::string& s);  // InvalidConfig when unknown
std::vector<ScenarioName> all_scenarios();

struct RunOptions {
  std::size_t threads = 1;
  bool force = false;  // overwrite artifacts written under a different config hash
};

struct MetricKey {
  std::string arm;
  std::string metric;  // open_set_tar, verification_tar, recall_at_1, spearman, ...
  std::string x_kind;  // far, rank, coverage, none
  double x = 0.0;
  std::string policy;  // "" for plain metrics, "variance" / "random" on curves

  friend auto operator<=>(const MetricKey&, const MetricKey&) = default;
};

struct MetricValue {
  MetricKey key;
  double value = 0.0;
  std::size_t seed_count = 1;
};

struct ScenarioResult {
  std::string scenario;
  std::string config_hash;
  std::vector<std::uint64_t> world_seeds;
  // One value per world seed, in world_seeds order.
  std::map<MetricKey, std::vector<double>> values;
  std::map<MetricKey, std::size_t> inner_seeds;  // random-rejection seeds per value
  std::size_t backfill_violations = 0;           // model_update only
  Report report;

  const std::vector<double>& per_seed(const MetricKey& key) const;
  double mean(const MetricKey& key) const;
};

// Keys of the metrics every arm reports.
MetricKey open_set_key(const std::string& arm, double far);
MetricKey verification_key(const std::string& arm, double far);
MetricKey recall_key(const std::string& arm);
// Leave-one-out Recall@1 over every sample of the gallery classes.
MetricKey loo_recall_key(const std::string& arm);

// Fused gallery plus the query-side probes it is evaluated against.
struct ArmData {
  std::vector<FusedGalleryItem> gallery;
  EmbeddingSet mated;
  EmbeddingSet nonmated;
};

// Open-set and 1:1 TAR at every FAR target, and Recall@1 of the mated probes.
// For 1:1 verification each mated class is pooled into one probe template
// (aggregate_template) and compared with every gallery item.
std::vector<MetricValue> evaluate_arm(const ArmData& arm, const EvalSpec& eval,
                                      const std::string& arm_name);

void write_arm(const ArmData& arm, const std::string& query_model_id,
               const std::filesystem::path& dir);
ArmData read_arm(const std::filesystem::path& dir);

// Writes <out>/<scenario>/report.{json,csv} and provenance.json. Refuses (IoError)
// to reuse a directory produced under a different config hash unless forced.
ScenarioResult run_scenario(ScenarioName name, const ExperimentConfig& cfg,
                            const RunOptions& opts = {});

// Records <root>/provenance.json. A non-empty root written under another
// config hash is an IoError unless `force`, which wipes it first.
void claim_output_dir(const std::filesystem::path& root, const std::string& label,
                      const std::string& hash, bool force);

// Writes <out>/synth/w<seed>/<model>/{train,gallery,mated,nonmated}.cmce for
// every world seed and model, plus classes.json.
std::vector<std::filesystem::path> generate_synthetic(const ExperimentConfig& cfg,
                                                      const RunOptions& opts = {});

// Artifact name of a trained transform, shared by scenarios and the CLI:
// m2m_<model>_t<tag>, unified_<model>, <variant>_<m1>+<m2>+...
std::string m2m_key(const std::string& model, std::size_t tag);
std::string transform_key(Variant v, const std::vector<std::string>& gallery_models,
                          std::size_t tag);

// Trains one transform toward the query model under
// <out>/train-transform/w<seed>/transforms/. Returns the parameter file path.
std::filesystem::path train_transform_artifact(const ExperimentConfig& cfg, Variant v,
                                               const std::vector<std::string>& gallery_models,
                                               std::uint64_t world_seed, std::size_t tag,
                                               const RunOptions& opts = {});

// Report rows: one seed-averaged row per metric ("mean" policy for plain
// metrics), then one row per world seed with curve suffix "/w<seed>".
Report build_report(const ScenarioResult& result, const ExperimentConfig& cfg);

}  // namespace cmce::cli
