#include "cmce/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cmce/error.hpp"
#include "cmce/random.hpp"

namespace cmce {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;

class Optimizer {
 public:
  Optimizer(const Trainables& p, const TrainConfig& cfg) : cfg_(cfg) {
    p.for_each_param([&](const MatrixXd& m) {
      first_.push_back(MatrixXd::Zero(m.rows(), m.cols()));
      if (cfg_.optimizer == OptimizerKind::kAdam) {
        second_.push_back(MatrixXd::Zero(m.rows(), m.cols()));
      }
    });
  }

  void step(Trainables& p, const Trainables& grad) {
    ++t_;
    std::vector<const MatrixXd*> grads;
    grad.for_each_param([&](const MatrixXd& g) { grads.push_back(&g); });
    std::size_t k = 0;
    if (cfg_.optimizer == OptimizerKind::kAdam) {
      const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
      const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
      const double lr = cfg_.learning_rate;
      const double eps = cfg_.adam_eps;
      p.for_each_param([&](MatrixXd& w) {
        const MatrixXd& g = *grads[k];
        first_[k] = cfg_.beta1 * first_[k] + (1.0 - cfg_.beta1) * g;
        second_[k] = cfg_.beta2 * second_[k] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
        w.array() -= lr * (first_[k].array() / c1) /
                     ((second_[k].array() / c2).sqrt() + eps);
        ++k;
      });
    } else {
      p.for_each_param([&](MatrixXd& w) {
        first_[k] = cfg_.momentum * first_[k] + *grads[k];
        w -= cfg_.learning_rate * first_[k];
        ++k;
      });
    }
  }

 private:
  const TrainConfig& cfg_;
  std::vector<MatrixXd> first_;
  std::vector<MatrixXd> second_;
  std::size_t t_ = 0;
};

std::vector<std::uint32_t> distinct_labels(const EmbeddingSet& set) {
  std::vector<std::uint32_t> labels;
  labels.reserve(set.size());
  for (const auto& item : set.items()) labels.push_back(item.class_label);
  std::sort(labels.begin(), labels.end());
  labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
  return labels;
}

}  // namespace

std::string to_string(Variant v) {
  switch (v) {
    case Variant::kM2M: return "m2m";
    case Variant::kUnified: return "unified";
    case Variant::kE2eMean: return "e2e_mean";
    case Variant::kE2eWeighted: return "e2e_weighted";
    case Variant::kConcat: return "concat";
  }
  return "?";
}

Variant parse_variant(const std::string& s) {
  if (s == "m2m") return Variant::kM2M;
  if (s == "unified") return Variant::kUnified;
  if (s == "e2e_mean") return Variant::kE2eMean;
  if (s == "e2e_weighted") return Variant::kE2eWeighted;
  if (s == "concat") return Variant::kConcat;
  throw InvalidConfig("unknown training variant '" + s + "'");
}

Fusion fusion_of(Variant v) {
  switch (v) {
    case Variant::kM2M:
    case Variant::kUnified: return Fusion::kIndependent;
    case Variant::kE2eMean: return Fusion::kE2eMean;
    case Variant::kE2eWeighted: return Fusion::kE2eWeighted;
    case Variant::kConcat: return Fusion::kConcat;
  }
  return Fusion::kIndependent;
}

PairBatch make_batch(const std::vector<EmbeddingSet>& gallery_sets, const EmbeddingSet& query_set,
                     const std::vector<std::uint32_t>& class_labels) {
  if (gallery_sets.empty()) throw InvalidConfig("no gallery sets");
  if (query_set.empty()) throw InvalidConfig("empty query set");
  PairBatch batch;
  batch.query = to_matrix(query_set);
  batch.labels.reserve(query_set.size());
  for (const auto& item : query_set.items()) {
    auto it = std::lower_bound(class_labels.begin(), class_labels.end(), item.class_label);
    if (it == class_labels.end() || *it != item.class_label) {
      throw InvalidConfig("label " + std::to_string(item.class_label) + " unknown to the head");
    }
    batch.labels.push_back(static_cast<int>(it - class_labels.begin()));
  }
  for (const auto& g : gallery_sets) {
    MatrixXd m(static_cast<Index>(query_set.size()), static_cast<Index>(g.dim()));
    for (std::size_t i = 0; i < query_set.size(); ++i) {
      const auto& q = query_set[i];
      const std::size_t j = g.find(q.item_id);
      if (j == g.size()) {
        throw InvalidConfig("item " + std::to_string(q.item_id) + " missing from gallery set '" +
                            g.model_id() + "'");
      }
      if (g[j].class_label != q.class_label) {
        throw InvalidConfig("item " + std::to_string(q.item_id) + " has conflicting labels");
      }
      const auto v = g[j].vector.values();
      for (std::size_t k = 0; k < v.size(); ++k) {
        m(static_cast<Index>(i), static_cast<Index>(k)) = v[k];
      }
    }
    batch.gallery.push_back(std::move(m));
  }
  return batch;
}

TrainedTransform train(const TrainSpec& spec) {
  spec.cfg.validate();
  const auto& gs = spec.gallery_sets;
  if (gs.empty()) throw InvalidConfig("training needs at least one gallery set");
  const bool single = spec.variant == Variant::kM2M || spec.variant == Variant::kUnified;
  if (single && gs.size() != 1) {
    throw InvalidConfig(to_string(spec.variant) + " trains from exactly one gallery set");
  }

  TrainedTransform out;
  out.variant = spec.variant;
  out.cfg = spec.cfg;
  out.class_labels = distinct_labels(spec.query_set);
  if (out.class_labels.size() < 2) throw InvalidConfig("training needs >= 2 classes");

  const std::size_t m = spec.query_set.dim();
  const std::uint64_t seed = spec.cfg.seed;
  auto& p = out.params;
  switch (spec.variant) {
    case Variant::kM2M:
    case Variant::kUnified:
      p.nets.push_back(init_transform(gs[0].dim(), m, derive_seed(seed, "net-0"), false));
      break;
    case Variant::kE2eMean:
    case Variant::kE2eWeighted:
      for (std::size_t i = 0; i < gs.size(); ++i) {
        p.nets.push_back(init_transform(gs[i].dim(), m,
                                        derive_seed(seed, "net-" + std::to_string(i)),
                                        spec.variant == Variant::kE2eWeighted));
      }
      break;
    case Variant::kConcat: {
      std::size_t n = 0;
      for (const auto& g : gs) n += g.dim();
      p.nets.push_back(init_transform(n, m, derive_seed(seed, "net-0"), false));
      break;
    }
  }
  if (spec.variant == Variant::kUnified) {
    p.query_net = init_transform(m, m, derive_seed(seed, "query-net"), false);
  }
  p.head = init_head(out.class_labels.size(), m, spec.cfg.head_scale,
                     derive_seed(seed, "head"));

  const PairBatch full = make_batch(gs, spec.query_set, out.class_labels);
  const Fusion fusion = fusion_of(spec.variant);
  const std::size_t count = full.size();

  Optimizer opt(p, spec.cfg);
  Rng shuffle_rng(derive_seed(seed, "shuffle"));
  std::vector<Index> order(count);
  std::iota(order.begin(), order.end(), Index{0});
  Trainables grad = p.zeros_like();

  PairBatch batch;
  batch.gallery.resize(full.gallery.size());
  for (std::size_t epoch = 0; epoch < spec.cfg.epochs; ++epoch) {
    shuffle(order, shuffle_rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < count; start += spec.cfg.batch_size) {
      const std::size_t end = std::min(count, start + spec.cfg.batch_size);
      const std::vector<Index> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(end));
      for (std::size_t g = 0; g < full.gallery.size(); ++g) {
        batch.gallery[g] = full.gallery[g](idx, Eigen::all);
      }
      batch.query = full.query(idx, Eigen::all);
      batch.labels.resize(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) {
        batch.labels[i] = full.labels[static_cast<std::size_t>(idx[i])];
      }

      grad.for_each_param([](MatrixXd& g) { g.setZero(); });
      const LossValue v = loss_and_grad(p, batch, spec.cfg, fusion, &grad);
      if (!std::isfinite(v.total)) {
        throw NonFiniteLoss("loss became non-finite at epoch " + std::to_string(epoch) +
                            " (sim=" + std::to_string(v.sim) + ", kl=" + std::to_string(v.kl) +
                            ", cls=" + std::to_string(v.cls) + ")");
      }
      epoch_loss += v.total * static_cast<double>(idx.size());
      opt.step(p, grad);
    }
    out.loss_history.push_back(epoch_loss / static_cast<double>(count));
  }
  return out;
}

EmbeddingSet TrainedTransform::apply_gallery(const std::vector<EmbeddingSet>& gallery_sets,
                                             const std::string& model_id) const {
  if (gallery_sets.empty()) throw InvalidConfig("no gallery sets");
  const EmbeddingSet& ref = gallery_sets.front();
  std::vector<MatrixXd> inputs;
  for (const auto& g : gallery_sets) {
    if (g.size() != ref.size()) throw DimensionMismatch("gallery sets differ in size");
    MatrixXd m(static_cast<Index>(ref.size()), static_cast<Index>(g.dim()));
    for (std::size_t i = 0; i < ref.size(); ++i) {
      const std::size_t j = g.find(ref[i].item_id);
      if (j == g.size()) throw InvalidConfig("gallery sets are not item-aligned");
      const auto v = g[j].vector.values();
      for (std::size_t k = 0; k < v.size(); ++k) {
        m(static_cast<Index>(i), static_cast<Index>(k)) = v[k];
      }
    }
    inputs.push_back(std::move(m));
  }
  const MatrixXd y = fuse_outputs(params, inputs, fusion_of(variant));
  EmbeddingSet out(model_id, static_cast<std::size_t>(y.cols()));
  std::vector<double> row(static_cast<std::size_t>(y.cols()));
  for (std::size_t i = 0; i < ref.size(); ++i) {
    for (Index k = 0; k < y.cols(); ++k) row[static_cast<std::size_t>(k)] = y(static_cast<Index>(i), k);
    out.add(EmbeddingVector(row), ref[i].class_label, ref[i].item_id);
  }
  return out;
}

EmbeddingSet TrainedTransform::apply_query(const EmbeddingSet& query_set) const {
  if (!params.query_net) return query_set;
  return transform_set(*params.query_net, query_set, query_set.model_id());
}

}  // namespace cmce
