#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace cmce {

inline constexpr double kNormEpsilon = 1e-9;

// Fixed-dimension real vector. Coordinates are always finite and dim >= 2.
class EmbeddingVector {
 public:
  EmbeddingVector() = default;
  explicit EmbeddingVector(std::vector<double> values);
  EmbeddingVector(std::initializer_list<double> values);

  std::size_t dim() const noexcept { return values_.size(); }
  std::span<const double> values() const noexcept { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }
  const std::vector<double>& raw() const noexcept { return values_; }

  double norm() const;

  friend bool operator==(const EmbeddingVector&, const EmbeddingVector&) = default;

 private:
  std::vector<double> values_;
};

struct EmbeddingItem {
  EmbeddingVector vector;
  std::uint32_t class_label = 0;
  std::uint32_t item_id = 0;

  friend bool operator==(const EmbeddingItem&, const EmbeddingItem&) = default;
};

// Labeled collection of embeddings produced by one model. Item ids are unique.
class EmbeddingSet {
 public:
  EmbeddingSet() = default;
  EmbeddingSet(std::string model_id, std::size_t dim);

  const std::string& model_id() const noexcept { return model_id_; }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return items_.size(); }
  bool empty() const noexcept { return items_.empty(); }
  const std::vector<EmbeddingItem>& items() const noexcept { return items_; }
  const EmbeddingItem& operator[](std::size_t i) const { return items_[i]; }

  // Throws DimensionMismatch on a dim mismatch and InvalidConfig on a
  // duplicate item id.
  void add(EmbeddingVector v, std::uint32_t class_label, std::uint32_t item_id);

  // Index of the item with the given id, or size() when absent.
  std::size_t find(std::uint32_t item_id) const;

  friend bool operator==(const EmbeddingSet& a, const EmbeddingSet& b) {
    return a.model_id_ == b.model_id_ && a.dim_ == b.dim_ && a.items_ == b.items_;
  }

 private:
  std::string model_id_;
  std::size_t dim_ = 0;
  std::vector<EmbeddingItem> items_;
  std::unordered_map<std::uint32_t, std::size_t> index_;
};

struct Template {
  std::uint32_t class_label = 0;
  std::vector<EmbeddingVector> members;
};

enum class DistanceMetric { kCosine, kEuclidean };

DistanceMetric parse_distance_metric(const std::string& name);
std::string to_string(DistanceMetric metric);

EmbeddingVector l2_normalize(const EmbeddingVector& v, double eps = kNormEpsilon);

// cos(a, b); throws DegenerateVector when either norm is <= kNormEpsilon.
double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b);

// cosine: 1 - cos(a, b) in [0, 2]. euclidean: |a - b|.
double distance(DistanceMetric metric, const EmbeddingVector& a,
                const EmbeddingVector& b);

// Mean of the members, then l2-normalized.
EmbeddingVector aggregate_template(const Template& t);

// Rounds every coordinate through float32, the precision artifacts are stored at.
EmbeddingVector quantize_f32(const EmbeddingVector& v);
EmbeddingSet quantize_f32(const EmbeddingSet& set);

}  // namespace cmce
