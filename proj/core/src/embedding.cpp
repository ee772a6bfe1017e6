#include "cmce/embedding.hpp"

#include <cmath>

#include "cmce/error.hpp"

namespace cmce {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kDegenerateVector: return "DegenerateVector";
    case ErrorKind::kDimensionMismatch: return "DimensionMismatch";
    case ErrorKind::kIo: return "IoError";
    case ErrorKind::kFormat: return "FormatError";
    case ErrorKind::kInvalidConfig: return "InvalidConfig";
    case ErrorKind::kInsufficientModels: return "InsufficientModels";
    case ErrorKind::kEmptyGallery: return "EmptyGallery";
    case ErrorKind::kEmptyScores: return "EmptyScores";
    case ErrorKind::kNonFiniteLoss: return "NonFiniteLoss";
  }
  return "Unknown";
}

EmbeddingVector::EmbeddingVector(std::vector<double> values)
    : values_(std::move(values)) {
  if (values_.size() < 2) {
    throw DimensionMismatch("embedding dim must be >= 2, got " +
                            std::to_string(values_.size()));
  }
  for (double x : values_) {
    if (!std::isfinite(x)) throw InvalidConfig("embedding has a non-finite coordinate");
  }
}

EmbeddingVector::EmbeddingVector(std::initializer_list<double> values)
    : EmbeddingVector(std::vector<double>(values)) {}

double EmbeddingVector::norm() const {
  double s = 0.0;
  for (double x : values_) s += x * x;
  return std::sqrt(s);
}

EmbeddingSet::EmbeddingSet(std::string model_id, std::size_t dim)
    : model_id_(std::move(model_id)), dim_(dim) {
  if (dim_ < 2) throw InvalidConfig("embedding set dim must be >= 2");
}

void EmbeddingSet::add(EmbeddingVector v, std::uint32_t class_label,
                       std::uint32_t item_id) {
  if (v.dim() != dim_) {
    throw DimensionMismatch("item dim " + std::to_string(v.dim()) +
                            " != set dim " + std::to_string(dim_));
  }
  auto [it, inserted] = index_.emplace(item_id, items_.size());
  if (!inserted) {
    throw InvalidConfig("duplicate item id " + std::to_string(item_id));
  }
  items_.push_back({std::move(v), class_label, item_id});
}

std::size_t EmbeddingSet::find(std::uint32_t item_id) const {
  auto it = index_.find(item_id);
  return it == index_.end() ? items_.size() : it->second;
}

DistanceMetric parse_distance_metric(const std::string& name) {
  if (name == "cosine" || name == "cosine_distance") return DistanceMetric::kCosine;
  if (name == "euclidean") return DistanceMetric::kEuclidean;
  throw InvalidConfig("unknown distance metric '" + name + "'");
}

std::string to_string(DistanceMetric metric) {
  return metric == DistanceMetric::kCosine ? "cosine" : "euclidean";
}

EmbeddingVector l2_normalize(const EmbeddingVector& v, double eps) {
  const double n = v.norm();
  if (n <= eps) throw DegenerateVector("cannot normalize a vector of norm " + std::to_string(n));
  std::vector<double> out(v.raw());
  for (double& x : out) x /= n;
  return EmbeddingVector(std::move(out));
}

namespace {

void check_dims(const EmbeddingVector& a, const EmbeddingVector& b) {
  if (a.dim() != b.dim()) {
    throw DimensionMismatch("dims differ: " + std::to_string(a.dim()) + " vs " +
                            std::to_string(b.dim()));
  }
}

}  // namespace

double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b) {
  check_dims(a, b);
  const double na = a.norm();
  const double nb = b.norm();
  if (na <= kNormEpsilon || nb <= kNormEpsilon) {
    throw DegenerateVector("cosine of a zero-norm vector");
  }
  double dot = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) dot += a[i] * b[i];
  double c = dot / (na * nb);
  if (c > 1.0) c = 1.0;
  if (c < -1.0) c = -1.0;
  return c;
}

double distance(DistanceMetric metric, const EmbeddingVector& a,
                const EmbeddingVector& b) {
  if (metric == DistanceMetric::kCosine) return 1.0 - cosine_similarity(a, b);
  check_dims(a, b);
  double s = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

EmbeddingVector aggregate_template(const Template& t) {
  if (t.members.empty()) throw InvalidConfig("template has no members");
  const std::size_t dim = t.members.front().dim();
  std::vector<double> mean(dim, 0.0);
  for (const auto& m : t.members) {
    if (m.dim() != dim) throw DimensionMismatch("template members differ in dim");
    for (std::size_t i = 0; i < dim; ++i) mean[i] += m[i];
  }
  for (double& x : mean) x /= static_cast<double>(t.members.size());
  return l2_normalize(EmbeddingVector(std::move(mean)));
}

EmbeddingVector quantize_f32(const EmbeddingVector& v) {
  std::vector<double> out(v.raw());
  for (double& x : out) x = static_cast<double>(static_cast<float>(x));
  return EmbeddingVector(std::move(out));
}

EmbeddingSet quantize_f32(const EmbeddingSet& set) {
  EmbeddingSet out(set.model_id(), set.dim());
  for (const auto& item : set.items()) {
    out.add(quantize_f32(item.vector), item.class_label, item.item_id);
  }
  return out;
}

}  // namespace cmce
