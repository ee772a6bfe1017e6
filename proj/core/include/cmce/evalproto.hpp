#pragma once

// Exact-search gallery index and the retrieval evaluation protocols:
// 1:1 verification TAR@FAR, 1:N open-set search TAR@FAR, Recall@1 and
// risk-coverage curves.
//
// All scores are cos(query, entry) computed as a sequential dot product of the
// l2_normalize()d vectors, so brute-force re-evaluations agree bit-for-bit.

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cmce/embedding.hpp"
#include "cmce/ensemble.hpp"

namespace cmce {

inline constexpr double kSentinelScore = -std::numeric_limits<double>::infinity();

// Sequential dot product of two equal-length unit vectors.
double unit_dot(std::span<const double> a, std::span<const double> b);

class GalleryIndex {
 public:
  struct Entry {
    std::uint32_t item_id = 0;
    std::uint32_t class_label = 0;
    std::vector<double> unit;  // empty for a degenerate (sentinel) entry
    bool sentinel() const noexcept { return unit.empty(); }
  };

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return entries_.size(); }
  const std::vector<Entry>& entries() const noexcept { return entries_; }
  std::size_t sentinel_count() const;
  bool has_class(std::uint32_t label) const;

 private:
  friend GalleryIndex build_index(const EmbeddingSet&);
  friend GalleryIndex build_index(const std::vector<FusedGalleryItem>&);
  std::size_t dim_ = 0;
  std::vector<Entry> entries_;
};

// Entries keep input order; vectors of norm <= kNormEpsilon (or flagged
// degenerate) become sentinels that score -inf. Throws EmptyGallery.
GalleryIndex build_index(const EmbeddingSet& gallery);
GalleryIndex build_index(const std::vector<FusedGalleryItem>& gallery);

struct SearchHit {
  std::uint32_t class_label = 0;
  std::uint32_t item_id = 0;
  double score = kSentinelScore;
};

// Argmax of cos(query, entry), ties to the lowest item id. Entries whose id
// equals exclude_item_id are skipped (leave-one-out).
SearchHit search_top1(const GalleryIndex& index, const EmbeddingVector& query,
                      std::optional<std::uint32_t> exclude_item_id = std::nullopt);

struct Probe {
  EmbeddingVector vector;
  std::uint32_t class_label = 0;
  std::uint32_t item_id = 0;
};

std::vector<Probe> to_probes(const EmbeddingSet& set);

struct ProbeSet {
  std::vector<Probe> mated;     // class enrolled in the gallery
  std::vector<Probe> nonmated;  // class absent from the gallery
};

struct RocOperatingPoint {
  double far_target = 0.0;
  double threshold = 0.0;
  double tar = 0.0;
  double achieved_far = 0.0;
};

// Accept iff score > t, where t is the (floor(far*K)+1)-th largest impostor
// score (t = -inf when floor(far*K) >= K). Ties reject, so achieved_far <= far.
RocOperatingPoint tar_at_far_verification(const std::vector<double>& genuine,
                                          const std::vector<double>& impostor, double far);

// Threshold from the nonmated top-1 scores; a mated probe succeeds only if its
// top-1 score exceeds the threshold and the top-1 label is its own class.
RocOperatingPoint open_set_search_eval(const GalleryIndex& index, const ProbeSet& probes,
                                       double far);

// Fraction of queries whose top-1 label is their own. Leave-one-out on item id.
double recall_at_1(const GalleryIndex& index, const std::vector<Probe>& queries);

enum class CurveMetric { kOpenSetTar, kRecallAt1 };
std::string to_string(CurveMetric m);
CurveMetric parse_curve_metric(const std::string& s);

struct CoveragePolicy {
  bool random = false;                // false: variance quantile
  std::vector<std::uint64_t> seeds;   // random mode: metric averaged over seeds
};

struct RiskCoveragePoint {
  double coverage = 1.0;
  double metric_value = 0.0;
  std::string policy;          // "variance" or "random"
  std::size_t seed_count = 1;
  std::string rule;            // how probes of fully rejected classes were handled
  double affected_probes = 0;  // mean count of reclassified/dropped probes
};

// For each coverage (strictly decreasing, in (0, 1]): reject gallery items,
// rebuild the index and re-evaluate. Open-set: mated probes whose class lost
// every gallery item become nonmated. Recall@1: such queries are dropped.
std::vector<RiskCoveragePoint> risk_coverage_curve(
    const std::vector<FusedGalleryItem>& items, const ProbeSet& probes, CurveMetric metric,
    const std::vector<double>& coverages, const CoveragePolicy& policy, double far);

// Spearman rank correlation with average ranks for ties.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

// ---- Reports -------------------------------------------------------------

struct ReportRow {
  std::string curve;
  std::string x_kind;  // "far", "coverage", "ensemble_size", ...
  double x = 0.0;
  double value = 0.0;
  std::string policy;
  std::size_t seed_count = 1;

  friend bool operator==(const ReportRow&, const ReportRow&) = default;
};

struct Report {
  nlohmann::ordered_json config = nlohmann::ordered_json::object();
  std::vector<ReportRow> rows;

  friend bool operator==(const Report&, const Report&) = default;
};

// Rounds a value to 9 significant digits (the precision reports carry).
double round_sig9(double v);

std::string report_csv(const Report& report);
std::string report_json(const Report& report);
Report parse_report_json(const std::string& text);

// Writes <stem>.json and <stem>.csv. CSV columns:
// curve,x_kind,x,value,policy,seed_count (UTF-8, LF).
void export_report(const Report& report, const std::string& stem);

}  // namespace cmce
