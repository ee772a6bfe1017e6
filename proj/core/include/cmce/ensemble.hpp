#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cmce/embedding.hpp"

namespace cmce {

// The N transformed embeddings of one gallery item, in model order.
struct TransformedStack {
  std::uint32_t item_id = 0;
  std::uint32_t class_label = 0;
  std::vector<EmbeddingVector> per_model;
  std::vector<std::string> model_ids;
};

struct FusedGalleryItem {
  std::uint32_t item_id = 0;
  std::uint32_t class_label = 0;
  EmbeddingVector fused;            // raw mean, not normalized
  std::optional<double> variance;   // present iff N >= 2
  bool degenerate = false;          // |fused| <= kNormEpsilon
  std::vector<std::string> contributing_models;

  // Unit-norm view used for scoring. Throws DegenerateVector if degenerate.
  EmbeddingVector normalized() const { return l2_normalize(fused); }
};

// Mean pairwise distance between the normalized members:
// 2 / (N (N - 1)) * sum_{i<j} d(t_i, t_j).
double variance(const TransformedStack& stack, DistanceMetric metric = DistanceMetric::kCosine);

// Coordinate-wise mean of the members plus their variance (N >= 2). A member
// of zero norm makes the variance undefined; it is then reported as 2, the
// largest possible distance between unit vectors. Never throws on degeneracy.
FusedGalleryItem fuse_mean(const TransformedStack& stack,
                           DistanceMetric metric = DistanceMetric::kCosine);

// Stacks and fuses item-aligned transformed sets (one per gallery model).
std::vector<TransformedStack> make_stacks(const std::vector<EmbeddingSet>& transformed);
std::vector<FusedGalleryItem> fuse_gallery(const std::vector<EmbeddingSet>& transformed,
                                           DistanceMetric metric = DistanceMetric::kCosine);

enum class RejectionMode { kVarianceThreshold, kCoverageQuantile, kRandom };

struct RejectionPolicy {
  RejectionMode mode = RejectionMode::kCoverageQuantile;
  double value = 1.0;  // threshold for kVarianceThreshold, coverage otherwise
  std::uint64_t seed = 0;
};

std::string to_string(RejectionMode mode);

struct RejectionResult {
  std::vector<FusedGalleryItem> retained;
  std::vector<FusedGalleryItem> rejected;
};

// Number of items a coverage keeps: floor(coverage * G), with a 1e-9 guard so
// products like 0.7 * 10 are not truncated to 6.
std::size_t coverage_count(double coverage, std::size_t total);

// Both outputs preserve the input order.
RejectionResult apply_rejection(const std::vector<FusedGalleryItem>& items,
                                const RejectionPolicy& policy);

// Fused galleries on disk: the embedding-set binary (model_id
// "fused:<query_model_id>", raw means) plus a JSON sidecar with per-item
// variance, degeneracy flag and contributing models.
void write_fused_gallery(const std::vector<FusedGalleryItem>& items,
                         const std::string& query_model_id, const std::string& bin_path,
                         const std::string& sidecar_path);
std::vector<FusedGalleryItem> read_fused_gallery(const std::string& bin_path,
                                                 const std::string& sidecar_path);

}  // namespace cmce
