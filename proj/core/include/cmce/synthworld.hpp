#pragma once

// Synthetic stand-in for a face/product dataset seen through several
// independently trained embedding models.
//
// A LatentWorld holds C unit class prototypes. A sample (class, sample_id) is
// the prototype rotated by a keyed random angle; each sample also carries a
// keyed "difficulty" factor d (log-normal), which scales both the latent
// perturbation and the model noise (noise scales with d^exponent). A
// SynthModel maps a latent point through an orthonormal projection, a
// family-specific nonlinearity, and adds noise that is partly model-private
// and partly shared by every model of the same family. All randomness is
// counter-keyed, so every output is a pure function of (seeds, config, key).

#include <cstdint>
#include <mutex>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "cmce/embedding.hpp"

namespace cmce {

struct WorldConfig {
  std::size_t latent_dim = 64;
  std::size_t num_classes = 300;
  double intra_class_spread = 0.15;  // radians, mean latent rotation at d = 1
  double difficulty_sigma = 0.7;     // log-std of the per-sample difficulty
  double noise_difficulty_exponent = 2.0;
  double family_noise_share = 0.3;  // variance fraction shared within a family
  std::uint64_t seed = 1;

  friend bool operator==(const WorldConfig&, const WorldConfig&) = default;
};

class LatentWorld {
 public:
  struct Sample {
    Eigen::VectorXd latent;
    double difficulty = 1.0;
  };

  explicit LatentWorld(WorldConfig config);

  const WorldConfig& config() const noexcept { return config_; }
  std::size_t latent_dim() const noexcept { return config_.latent_dim; }
  std::size_t num_classes() const noexcept { return config_.num_classes; }
  // Row c is the unit prototype of class c.
  const Eigen::MatrixXd& prototypes() const noexcept { return prototypes_; }

  Sample sample(std::uint32_t class_label, std::uint32_t sample_id) const;

 private:
  WorldConfig config_;
  Eigen::MatrixXd prototypes_;
};

enum class ArchFamily { kA, kB, kC };

ArchFamily parse_arch_family(const std::string& name);
std::string to_string(ArchFamily family);

struct ModelConfig {
  std::string model_id;
  ArchFamily family = ArchFamily::kA;
  std::size_t out_dim = 64;
  double noise_sigma = 0.05;  // per-coordinate std at difficulty 1
  std::uint64_t seed = 0;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

class SynthModel {
 public:
  SynthModel(const LatentWorld& world, ModelConfig config);

  const ModelConfig& config() const noexcept { return config_; }
  const std::string& model_id() const noexcept { return config_.model_id; }
  std::size_t out_dim() const noexcept { return config_.out_dim; }
  // out_dim x latent_dim with orthonormal rows.
  const Eigen::MatrixXd& rotation() const noexcept { return rotation_; }
  // A: 1 (identity), B: 2 (tanh(2x)), C: 0.5 (signed square root exponent).
  double nonlinearity_gain() const noexcept;

 private:
  ModelConfig config_;
  Eigen::MatrixXd rotation_;
};

struct SampleSpec {
  std::uint32_t class_label = 0;
  std::uint32_t sample_id = 0;
};

// Records every embed() call made through generate_split, so pipelines can
// prove which (model, sample) pairs were never embedded.
class EmbedLog {
 public:
  struct Entry {
    std::string model_id;
    SampleSpec spec;
  };
  void record(const std::string& model_id, const SampleSpec& spec);
  std::vector<Entry> entries() const;
  std::size_t count(const std::string& model_id) const;

 private:
  mutable std::mutex mu_;
  std::vector<Entry> entries_;
};

LatentWorld make_world(std::size_t latent_dim, std::size_t num_classes,
                       double intra_class_spread, std::uint64_t seed);
LatentWorld make_world(const WorldConfig& config);

SynthModel spawn_model(const LatentWorld& world, ArchFamily family,
                       std::size_t out_dim, double noise_sigma, std::uint64_t seed);
SynthModel spawn_model(const LatentWorld& world, const ModelConfig& config);

EmbeddingVector embed(const SynthModel& model, const LatentWorld& world,
                      const SampleSpec& spec);

// Item ids pack (class_label, sample_id) as label * 65536 + sample_id, so the
// same sample gets the same id under every model. Sample ids for class c are
// id_offset .. id_offset + samples_per_class - 1.
inline constexpr std::uint32_t kMaxSampleId = 0xFFFF;
std::uint32_t make_item_id(std::uint32_t class_label, std::uint32_t sample_id);
SampleSpec split_item_id(std::uint32_t item_id);

EmbeddingSet generate_split(const LatentWorld& world, const SynthModel& model,
                            const std::vector<std::uint32_t>& classes,
                            std::uint32_t samples_per_class, std::uint32_t id_offset,
                            EmbedLog* log = nullptr);

void to_json(nlohmann::json& j, const WorldConfig& c);
void from_json(const nlohmann::json& j, WorldConfig& c);
void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

}  // namespace cmce
