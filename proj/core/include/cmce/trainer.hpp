#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cmce/embedding.hpp"
#include "cmce/loss.hpp"

namespace cmce {

// m2m:          one net, identity query side.
// unified:      one gallery net and one trainable query net.
// e2e_mean:     one net per gallery model, trained on the mean of their outputs.
// e2e_weighted: as e2e_mean with per-net scalar weight heads (softmax weights).
// concat:       one net over the concatenated gallery embeddings.
enum class Variant { kM2M, kUnified, kE2eMean, kE2eWeighted, kConcat };

std::string to_string(Variant v);
Variant parse_variant(const std::string& s);
Fusion fusion_of(Variant v);

struct TrainSpec {
  Variant variant = Variant::kM2M;
  std::vector<EmbeddingSet> gallery_sets;
  EmbeddingSet query_set;
  TrainConfig cfg;
};

struct TrainedTransform {
  Variant variant = Variant::kM2M;
  Trainables params;
  std::vector<std::uint32_t> class_labels;  // head row -> class label
  std::vector<double> loss_history;          // per-epoch mean loss
  TrainConfig cfg;

  // Transformed gallery embeddings for one sample from every gallery model,
  // fused as the variant prescribes (single net output, mean, weighted mean
  // or concat net output). Not normalized.
  EmbeddingSet apply_gallery(const std::vector<EmbeddingSet>& gallery_sets,
                             const std::string& model_id) const;
  // Query-side map: identity unless a query net was trained.
  EmbeddingSet apply_query(const EmbeddingSet& query_set) const;
};

// Aligns the sets by item id (order of query_set) and builds a full batch.
// Labels are mapped to head rows through class_labels.
PairBatch make_batch(const std::vector<EmbeddingSet>& gallery_sets, const EmbeddingSet& query_set,
                     const std::vector<std::uint32_t>& class_labels);

// Mini-batch training with seeded shuffling. Throws NonFiniteLoss if the loss
// diverges.
TrainedTransform train(const TrainSpec& spec);

}  // namespace cmce
