#pragma once

// Experiment configuration shared by every CLI verb and scenario runner.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cmce/embedding.hpp"
#include "cmce/loss.hpp"
#include "cmce/synthworld.hpp"
#include "cmce/trainer.hpp"

namespace cmce::cli {

inline constexpr const char* kToolVersion = "0.1.0";

enum class Role { kGallery, kQuery };

struct RosterEntry {
  ModelConfig model;  // model.seed is filled in by resolve_seeds() when omitted
  Role role = Role::kGallery;
  bool seed_given = false;
};

// Class partitions are half-open label ranges. Every class has
// samples_per_class samples: the first gallery_samples of a gallery class are
// enrolled, the rest become probes. Nonmated classes contribute the same
// number of probes per class.
struct SplitSpec {
  std::uint32_t train_begin = 0, train_end = 150;
  std::uint32_t gallery_begin = 150, gallery_end = 250;
  std::uint32_t nonmated_begin = 250, nonmated_end = 300;
  std::uint32_t samples_per_class = 8;
  std::uint32_t gallery_samples = 2;
};

struct EvalSpec {
  std::vector<double> far_targets{0.1, 0.01};
  double primary_far = 0.1;
  std::vector<double> coverages{1.0, 0.9, 0.8, 0.7};
  std::size_t rejection_seeds = 5;
  DistanceMetric variance_metric = DistanceMetric::kCosine;
};

struct ScenarioSpec {
  // Nested ensemble order: size k uses the first k models.
  std::vector<std::string> ensemble_models{"g-a0", "g-b0", "g-c0", "g-a1"};
  std::vector<std::size_t> ensemble_sizes{1, 2, 4};
  std::string dt_model = "g-a0";
  std::vector<std::string> dtg_models{"g-a0", "g-a1", "g-a2", "g-a3"};
  std::vector<std::string> dtga_models{"g-a0", "g-b0", "g-c0", "g-a1"};
  double update_train_fraction = 0.5;
  double update_noise_scale = 1.5;
  std::vector<std::size_t> update_sizes{2, 4};
};

struct ExperimentConfig {
  WorldConfig world;
  std::vector<std::uint64_t> world_seeds{1, 2, 3, 4, 5};
  std::vector<RosterEntry> models;
  SplitSpec split;
  TrainConfig train;
  // Per-variant partial overrides of `train`, keyed by variant name.
  std::map<std::string, nlohmann::json> train_overrides;
  EvalSpec eval;
  ScenarioSpec scenarios;
  std::string output_dir = "cmce-out";
  std::uint64_t master_seed = 0;

  void validate() const;
  const RosterEntry& model(const std::string& id) const;
  const RosterEntry& query_model() const;
  TrainConfig train_config(Variant v) const;
};

ExperimentConfig default_config();

// Missing fields keep their default_config() values.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);
nlohmann::ordered_json to_json(const ExperimentConfig& cfg);

// Fills omitted model seeds from the master seed: derive_seed(master, "model/<id>").
void resolve_seeds(ExperimentConfig& cfg);

// Hex digest of the canonical JSON of a resolved config.
std::string config_hash(const ExperimentConfig& cfg);

std::vector<std::uint32_t> class_range(std::uint32_t begin, std::uint32_t end);

}  // namespace cmce::cli
