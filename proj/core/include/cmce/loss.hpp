#pragma once

// Compatibility loss for transformation training: cosine similarity between
// the (fused) transformed gallery embedding t and the query embedding q, a KL
// term between the shared-head posteriors of t and q, and cross-entropy of
// both posteriors against the class label. Gradients are derived by hand and
// cover every trainable matrix, the classifier head included.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "cmce/transform_net.hpp"

namespace cmce {

// Normalized-softmax classifier: logits = scale * cos(row_c, x).
struct ClassifierHead {
  Eigen::MatrixXd weights;  // C x m
  double scale = 16.0;
};

ClassifierHead init_head(std::size_t num_classes, std::size_t dim, double scale,
                         std::uint64_t seed);

enum class Fusion { kIndependent, kE2eMean, kE2eWeighted, kConcat };
enum class KlMode { kSymmetric, kGalleryToQuery, kQueryToGallery };
enum class OptimizerKind { kSgdMomentum, kAdam };

std::string to_string(Fusion f);
std::string to_string(KlMode m);
std::string to_string(OptimizerKind o);
KlMode parse_kl_mode(const std::string& s);
OptimizerKind parse_optimizer(const std::string& s);

struct TrainConfig {
  std::size_t epochs = 300;
  std::size_t batch_size = 256;
  double learning_rate = 1e-3;
  double lambda_sim = 1.0;
  double lambda_kl = 1.0;
  double lambda_cls = 1.0;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double head_scale = 16.0;
  KlMode kl_mode = KlMode::kSymmetric;
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

// Index-aligned training batch. gallery[i] holds the embeddings of gallery
// model i (rows = items); labels are class indices into the head.
struct PairBatch {
  std::vector<Eigen::MatrixXd> gallery;
  Eigen::MatrixXd query;
  std::vector<int> labels;

  std::size_t size() const noexcept { return labels.size(); }
};

// Everything a training run optimizes. An absent query_net means the query
// side is the identity map (model-to-model training).
struct Trainables {
  std::vector<TransformNet> nets;
  std::optional<TransformNet> query_net;
  ClassifierHead head;

  template <typename F>
  void for_each_param(F&& f) {
    for (auto& n : nets) n.for_each_param(f);
    if (query_net) query_net->for_each_param(f);
    f(head.weights);
  }
  template <typename F>
  void for_each_param(F&& f) const {
    const_cast<Trainables*>(this)->for_each_param(
        [&](Eigen::MatrixXd& m) { f(static_cast<const Eigen::MatrixXd&>(m)); });
  }

  Trainables zeros_like() const;
};

struct LossValue {
  double total = 0.0;
  double sim = 0.0;
  double kl = 0.0;
  double cls = 0.0;
};

// Fused gallery-side output for a batch, before normalization. Also used at
// inference time by the joint variants.
Eigen::MatrixXd fuse_outputs(const Trainables& p, const std::vector<Eigen::MatrixXd>& gallery,
                             Fusion fusion);

// Loss and, when grad is non-null, its exact gradient accumulated into grad
// (which must be shaped like p, e.g. p.zeros_like()).
LossValue loss_and_grad(const Trainables& p, const PairBatch& batch, const TrainConfig& cfg,
                        Fusion fusion, Trainables* grad);

// Compares analytic gradients to central finite differences (h = 1e-4) on
// `probes` parameters drawn with `seed`; returns the max relative error
// |a - f| / max(|a|, |f|, 1e-8). A parameter whose +-h perturbation flips
// the sign of any rectifier pre-activation is redrawn (up to 100 times per
// probe), since the loss is not differentiable between the two samples.
double grad_check(const Trainables& p, const PairBatch& batch, const TrainConfig& cfg,
                  Fusion fusion, std::size_t probes, std::uint64_t seed);

}  // namespace cmce
