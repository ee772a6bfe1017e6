#include "cmce/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "binary_io.hpp"
#include "cmce/embedding_io.hpp"
#include "cmce/error.hpp"
#include "cmce/random.hpp"

namespace cmce {

namespace {

void check_stack(const TransformedStack& stack) {
  if (stack.per_model.empty()) throw InvalidConfig("transformed stack is empty");
  const std::size_t dim = stack.per_model.front().dim();
  for (const auto& v : stack.per_model) {
    if (v.dim() != dim) throw DimensionMismatch("stack members differ in dim");
  }
}

}  // namespace

double variance(const TransformedStack& stack, DistanceMetric metric) {
  check_stack(stack);
  const std::size_t n = stack.per_model.size();
  if (n < 2) throw InsufficientModels("variance needs at least two transformed embeddings");
  std::vector<EmbeddingVector> unit;
  unit.reserve(n);
  for (const auto& v : stack.per_model) unit.push_back(l2_normalize(v));
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) sum += distance(metric, unit[i], unit[j]);
  }
  return 2.0 * sum / (static_cast<double>(n) * static_cast<double>(n - 1));
}

FusedGalleryItem fuse_mean(const TransformedStack& stack, DistanceMetric metric) {
  check_stack(stack);
  const std::size_t n = stack.per_model.size();
  const std::size_t dim = stack.per_model.front().dim();
  std::vector<double> mean(dim, 0.0);
  for (const auto& v : stack.per_model) {
    for (std::size_t k = 0; k < dim; ++k) mean[k] += v[k];
  }
  for (double& x : mean) x /= static_cast<double>(n);

  FusedGalleryItem item;
  item.item_id = stack.item_id;
  item.class_label = stack.class_label;
  item.fused = EmbeddingVector(std::move(mean));
  item.degenerate = item.fused.norm() <= kNormEpsilon;
  item.contributing_models = stack.model_ids;
  if (n >= 2) {
    try {
      item.variance = variance(stack, metric);
    } catch (const DegenerateVector&) {
      item.variance = 2.0;
    }
  }
  return item;
}

std::vector<TransformedStack> make_stacks(const std::vector<EmbeddingSet>& transformed) {
  if (transformed.empty()) throw InsufficientModels("no transformed sets to fuse");
  const EmbeddingSet& ref = transformed.front();
  std::vector<TransformedStack> stacks;
  stacks.reserve(ref.size());
  for (const auto& item : ref.items()) {
    TransformedStack s;
    s.item_id = item.item_id;
    s.class_label = item.class_label;
    for (const auto& set : transformed) {
      if (set.dim() != ref.dim()) throw DimensionMismatch("transformed sets differ in dim");
      const std::size_t j = set.find(item.item_id);
      if (j == set.size()) {
        throw InvalidConfig("item " + std::to_string(item.item_id) + " missing from '" +
                            set.model_id() + "'");
      }
      s.per_model.push_back(set[j].vector);
      s.model_ids.push_back(set.model_id());
    }
    stacks.push_back(std::move(s));
  }
  return stacks;
}

std::vector<FusedGalleryItem> fuse_gallery(const std::vector<EmbeddingSet>& transformed,
                                           DistanceMetric metric) {
  std::vector<FusedGalleryItem> out;
  for (const auto& s : make_stacks(transformed)) out.push_back(fuse_mean(s, metric));
  return out;
}

std::string to_string(RejectionMode mode) {
  switch (mode) {
    case RejectionMode::kVarianceThreshold: return "variance_threshold";
    case RejectionMode::kCoverageQuantile: return "coverage_quantile";
    case RejectionMode::kRandom: return "random";
  }
  return "?";
}

std::size_t coverage_count(double coverage, std::size_t total) {
  if (!(coverage > 0.0 && coverage <= 1.0)) {
    throw InvalidConfig("coverage must be in (0, 1], got " + std::to_string(coverage));
  }
  const auto n = static_cast<std::size_t>(std::floor(coverage * static_cast<double>(total) + 1e-9));
  return std::min(n, total);
}

RejectionResult apply_rejection(const std::vector<FusedGalleryItem>& items,
                                const RejectionPolicy& policy) {
  std::vector<bool> keep(items.size(), false);
  switch (policy.mode) {
    case RejectionMode::kVarianceThreshold: {
      if (!(policy.value >= 0.0)) throw InvalidConfig("variance threshold must be >= 0");
      for (std::size_t i = 0; i < items.size(); ++i) {
        if (!items[i].variance) throw InsufficientModels("item has no variance");
        keep[i] = *items[i].variance <= policy.value;
      }
      break;
    }
    case RejectionMode::kCoverageQuantile: {
      const std::size_t count = coverage_count(policy.value, items.size());
      for (const auto& it : items) {
        if (!it.variance) throw InsufficientModels("item has no variance");
      }
      std::vector<std::size_t> order(items.size());
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (*items[a].variance != *items[b].variance) {
          return *items[a].variance < *items[b].variance;
        }
        return items[a].item_id < items[b].item_id;
      });
      for (std::size_t i = 0; i < count; ++i) keep[order[i]] = true;
      break;
    }
    case RejectionMode::kRandom: {
      const std::size_t count = coverage_count(policy.value, items.size());
      std::vector<std::size_t> order(items.size());
      std::iota(order.begin(), order.end(), std::size_t{0});
      Rng rng(derive_seed(policy.seed, "random-rejection"));
      shuffle(order, rng);
      for (std::size_t i = 0; i < count; ++i) keep[order[i]] = true;
      break;
    }
  }
  RejectionResult r;
  for (std::size_t i = 0; i < items.size(); ++i) {
    (keep[i] ? r.retained : r.rejected).push_back(items[i]);
  }
  return r;
}

void write_fused_gallery(const std::vector<FusedGalleryItem>& items,
                         const std::string& query_model_id, const std::string& bin_path,
                         const std::string& sidecar_path) {
  if (items.empty()) throw EmptyGallery("no fused items to write");
  EmbeddingSet set("fused:" + query_model_id, items.front().fused.dim());
  nlohmann::ordered_json side;
  side["query_model_id"] = query_model_id;
  side["items"] = nlohmann::ordered_json::array();
  for (const auto& it : items) {
    set.add(it.fused, it.class_label, it.item_id);
    nlohmann::ordered_json j;
    j["item_id"] = it.item_id;
    j["variance"] = it.variance ? nlohmann::ordered_json(*it.variance) : nlohmann::ordered_json();
    j["degenerate"] = it.degenerate;
    j["contributing_models"] = it.contributing_models;
    side["items"].push_back(std::move(j));
  }
  write_embedding_set(set, bin_path);
  detail::write_file(sidecar_path, side.dump(2) + "\n");
}

std::vector<FusedGalleryItem> read_fused_gallery(const std::string& bin_path,
                                                 const std::string& sidecar_path) {
  const EmbeddingSet set = read_embedding_set(bin_path);
  std::vector<FusedGalleryItem> items;
  try {
    const auto side = nlohmann::json::parse(detail::read_file(sidecar_path));
    const auto& arr = side.at("items");
    if (arr.size() != set.size()) throw FormatError("sidecar and gallery sizes differ");
    for (std::size_t i = 0; i < set.size(); ++i) {
      const auto& j = arr[i];
      FusedGalleryItem it;
      it.item_id = set[i].item_id;
      if (j.at("item_id").get<std::uint32_t>() != it.item_id) {
        throw FormatError("sidecar item order differs from gallery file");
      }
      it.class_label = set[i].class_label;
      it.fused = set[i].vector;
      if (!j.at("variance").is_null()) it.variance = j.at("variance").get<double>();
      it.degenerate = it.fused.norm() <= kNormEpsilon;
      it.contributing_models = j.at("contributing_models").get<std::vector<std::string>>();
      items.push_back(std::move(it));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad fused-gallery sidecar: ") + e.what());
  }
  return items;
}

}  // namespace cmce
