#include "cmce/loss.hpp"

#include <algorithm>
#include <cmath>

#include "cmce/error.hpp"
#include "cmce/random.hpp"

namespace cmce {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

// Row-wise l2 normalization; returns the norms through `norms`.
MatrixXd normalize_rows(const MatrixXd& x, VectorXd& norms) {
  norms = x.rowwise().norm();
  if ((norms.array() <= kNormEpsilon).any()) {
    throw DegenerateVector("zero-norm row in compatibility loss");
  }
  return norms.cwiseInverse().asDiagonal() * x;
}

// Backward of x_hat = x / |x| (row-wise).
MatrixXd normalize_rows_backward(const MatrixXd& x_hat, const VectorXd& norms,
                                 const MatrixXd& d_hat) {
  const VectorXd dots = (x_hat.array() * d_hat.array()).rowwise().sum();
  return norms.cwiseInverse().asDiagonal() * (d_hat - dots.asDiagonal() * x_hat);
}

MatrixXd log_softmax_rows(const MatrixXd& logits) {
  const VectorXd mx = logits.rowwise().maxCoeff();
  MatrixXd shifted = logits.colwise() - mx;
  const VectorXd lse = shifted.array().exp().rowwise().sum().log().matrix();
  return shifted.colwise() - lse;
}

MatrixXd hconcat(const std::vector<MatrixXd>& parts) {
  Index cols = 0;
  for (const auto& p : parts) cols += p.cols();
  MatrixXd out(parts.front().rows(), cols);
  Index c = 0;
  for (const auto& p : parts) {
    out.middleCols(c, p.cols()) = p;
    c += p.cols();
  }
  return out;
}

void check_shapes(const Trainables& p, std::size_t num_gallery, Fusion fusion) {
  if (p.nets.empty()) throw InvalidConfig("no transformation nets");
  switch (fusion) {
    case Fusion::kIndependent:
      if (p.nets.size() != 1 || num_gallery != 1) {
        throw InvalidConfig("independent fusion uses exactly one net and one gallery model");
      }
      break;
    case Fusion::kConcat:
      if (p.nets.size() != 1) throw InvalidConfig("concat fusion uses exactly one net");
      break;
    case Fusion::kE2eMean:
    case Fusion::kE2eWeighted:
      if (p.nets.size() != num_gallery) {
        throw InvalidConfig("joint averaging needs one net per gallery model");
      }
      if (fusion == Fusion::kE2eWeighted) {
        for (const auto& n : p.nets) {
          if (!n.has_weight_head) throw InvalidConfig("weighted fusion needs weight heads");
        }
      }
      break;
  }
}

// Softmax weights (B x N) from the per-net scalar heads.
MatrixXd fusion_weights(const Trainables& p, const std::vector<MatrixXd>& outputs) {
  const Index b = outputs.front().rows();
  const Index n = static_cast<Index>(outputs.size());
  MatrixXd s(b, n);
  for (Index i = 0; i < n; ++i) {
    const auto& net = p.nets[static_cast<std::size_t>(i)];
    s.col(i) = (outputs[static_cast<std::size_t>(i)] * net.weight_w.transpose()).col(0).array() +
               net.weight_b(0, 0);
  }
  return log_softmax_rows(s).array().exp().matrix();
}

// Sign pattern of every leaky-rectifier pre-activation in the batch.
std::vector<bool> activation_pattern(const Trainables& p, const PairBatch& batch, Fusion fusion) {
  std::vector<bool> out;
  auto visit = [&](const TransformNet& net, const MatrixXd& x) {
    const ForwardCache c = forward_cached(net, x);
    for (const auto& pre : c.pre) {
      for (Index k = 0; k < pre.size(); ++k) out.push_back(pre.data()[k] > 0.0);
    }
  };
  if (fusion == Fusion::kConcat) {
    visit(p.nets.front(), hconcat(batch.gallery));
  } else {
    for (std::size_t i = 0; i < p.nets.size(); ++i) visit(p.nets[i], batch.gallery[i]);
  }
  if (p.query_net) visit(*p.query_net, batch.query);
  return out;
}

}  // namespace

ClassifierHead init_head(std::size_t num_classes, std::size_t dim, double scale,
                         std::uint64_t seed) {
  if (num_classes < 2) throw InvalidConfig("classifier head needs >= 2 classes");
  if (!(scale > 0.0)) throw InvalidConfig("head scale must be > 0");
  ClassifierHead h;
  h.scale = scale;
  h.weights.resize(static_cast<Index>(num_classes), static_cast<Index>(dim));
  Rng rng(derive_seed(seed, "classifier-head"));
  for (Index i = 0; i < h.weights.rows(); ++i) {
    for (Index k = 0; k < h.weights.cols(); ++k) h.weights(i, k) = rng.normal();
    h.weights.row(i).normalize();
  }
  return h;
}

std::string to_string(Fusion f) {
  switch (f) {
    case Fusion::kIndependent: return "independent";
    case Fusion::kE2eMean: return "e2e_mean";
    case Fusion::kE2eWeighted: return "e2e_weighted";
    case Fusion::kConcat: return "concat";
  }
  return "?";
}

std::string to_string(KlMode m) {
  switch (m) {
    case KlMode::kSymmetric: return "symmetric";
    case KlMode::kGalleryToQuery: return "gallery_to_query";
    case KlMode::kQueryToGallery: return "query_to_gallery";
  }
  return "?";
}

std::string to_string(OptimizerKind o) {
  return o == OptimizerKind::kAdam ? "adaptive_moments" : "sgd_momentum";
}

KlMode parse_kl_mode(const std::string& s) {
  if (s == "symmetric") return KlMode::kSymmetric;
  if (s == "gallery_to_query") return KlMode::kGalleryToQuery;
  if (s == "query_to_gallery") return KlMode::kQueryToGallery;
  throw InvalidConfig("unknown kl_mode '" + s + "'");
}

OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "adaptive_moments" || s == "adam") return OptimizerKind::kAdam;
  if (s == "sgd_momentum" || s == "sgd") return OptimizerKind::kSgdMomentum;
  throw InvalidConfig("unknown optimizer '" + s + "'");
}

void TrainConfig::validate() const {
  if (epochs == 0) throw InvalidConfig("epochs must be > 0");
  if (batch_size == 0) throw InvalidConfig("batch_size must be > 0");
  if (!(learning_rate > 0.0)) throw InvalidConfig("learning_rate must be > 0");
  if (lambda_sim < 0.0 || lambda_kl < 0.0 || lambda_cls < 0.0) {
    throw InvalidConfig("loss weights must be >= 0");
  }
  if (lambda_sim == 0.0 && lambda_kl == 0.0 && lambda_cls == 0.0) {
    throw InvalidConfig("at least one loss weight must be > 0");
  }
  if (!(head_scale > 0.0)) throw InvalidConfig("head_scale must be > 0");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"learning_rate", c.learning_rate},
                     {"lambda_sim", c.lambda_sim},
                     {"lambda_kl", c.lambda_kl},
                     {"lambda_cls", c.lambda_cls},
                     {"optimizer", to_string(c.optimizer)},
                     {"momentum", c.momentum},
                     {"beta1", c.beta1},
                     {"beta2", c.beta2},
                     {"adam_eps", c.adam_eps},
                     {"head_scale", c.head_scale},
                     {"kl_mode", to_string(c.kl_mode)},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  const TrainConfig d;
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.lambda_sim = j.value("lambda_sim", d.lambda_sim);
  c.lambda_kl = j.value("lambda_kl", d.lambda_kl);
  c.lambda_cls = j.value("lambda_cls", d.lambda_cls);
  c.optimizer = parse_optimizer(j.value("optimizer", to_string(d.optimizer)));
  c.momentum = j.value("momentum", d.momentum);
  c.beta1 = j.value("beta1", d.beta1);
  c.beta2 = j.value("beta2", d.beta2);
  c.adam_eps = j.value("adam_eps", d.adam_eps);
  c.head_scale = j.value("head_scale", d.head_scale);
  c.kl_mode = parse_kl_mode(j.value("kl_mode", to_string(d.kl_mode)));
  c.seed = j.value("seed", d.seed);
}

Trainables Trainables::zeros_like() const {
  Trainables z = *this;
  z.for_each_param([](Eigen::MatrixXd& m) { m.setZero(); });
  return z;
}

Eigen::MatrixXd fuse_outputs(const Trainables& p, const std::vector<Eigen::MatrixXd>& gallery,
                             Fusion fusion) {
  if (gallery.empty()) throw InvalidConfig("no gallery inputs");
  check_shapes(p, gallery.size(), fusion);
  switch (fusion) {
    case Fusion::kIndependent:
      return forward_batch(p.nets[0], gallery[0]);
    case Fusion::kConcat:
      return forward_batch(p.nets[0], hconcat(gallery));
    case Fusion::kE2eMean: {
      MatrixXd t = forward_batch(p.nets[0], gallery[0]);
      for (std::size_t i = 1; i < gallery.size(); ++i) t += forward_batch(p.nets[i], gallery[i]);
      return t / static_cast<double>(gallery.size());
    }
    case Fusion::kE2eWeighted: {
      std::vector<MatrixXd> ys;
      for (std::size_t i = 0; i < gallery.size(); ++i) {
        ys.push_back(forward_batch(p.nets[i], gallery[i]));
      }
      const MatrixXd w = fusion_weights(p, ys);
      MatrixXd t = MatrixXd::Zero(ys[0].rows(), ys[0].cols());
      for (std::size_t i = 0; i < ys.size(); ++i) {
        t += w.col(static_cast<Index>(i)).asDiagonal() * ys[i];
      }
      return t;
    }
  }
  return {};
}

LossValue loss_and_grad(const Trainables& p, const PairBatch& batch, const TrainConfig& cfg,
                        Fusion fusion, Trainables* grad) {
  const Index b = static_cast<Index>(batch.size());
  if (b == 0) throw InvalidConfig("empty batch");
  if (batch.gallery.empty()) throw InvalidConfig("batch has no gallery embeddings");
  check_shapes(p, batch.gallery.size(), fusion);
  for (const auto& g : batch.gallery) {
    if (g.rows() != b) throw DimensionMismatch("gallery rows differ from label count");
  }
  if (batch.query.rows() != b) throw DimensionMismatch("query rows differ from label count");
  const Index num_classes = p.head.weights.rows();
  for (int y : batch.labels) {
    if (y < 0 || y >= num_classes) throw InvalidConfig("label outside classifier head");
  }

  // Gallery side.
  std::vector<ForwardCache> caches;
  std::vector<MatrixXd> outputs;
  MatrixXd fusion_w;
  MatrixXd t;
  if (fusion == Fusion::kConcat) {
    caches.push_back(forward_cached(p.nets[0], hconcat(batch.gallery)));
    t = caches[0].output();
  } else {
    for (std::size_t i = 0; i < p.nets.size(); ++i) {
      caches.push_back(forward_cached(p.nets[i], batch.gallery[i]));
      outputs.push_back(caches.back().output());
    }
    if (fusion == Fusion::kIndependent) {
      t = outputs[0];
    } else if (fusion == Fusion::kE2eMean) {
      t = outputs[0];
      for (std::size_t i = 1; i < outputs.size(); ++i) t += outputs[i];
      t /= static_cast<double>(outputs.size());
    } else {
      fusion_w = fusion_weights(p, outputs);
      t = MatrixXd::Zero(b, outputs[0].cols());
      for (std::size_t i = 0; i < outputs.size(); ++i) {
        t += fusion_w.col(static_cast<Index>(i)).asDiagonal() * outputs[i];
      }
    }
  }

  // Query side.
  std::optional<ForwardCache> qcache;
  MatrixXd q;
  if (p.query_net) {
    qcache = forward_cached(*p.query_net, batch.query);
    q = qcache->output();
  } else {
    q = batch.query;
  }
  if (t.cols() != q.cols() || t.cols() != p.head.weights.cols()) {
    throw DimensionMismatch("transformed gallery, query and head dims disagree");
  }

  VectorXd t_norm, q_norm, w_norm;
  const MatrixXd t_hat = normalize_rows(t, t_norm);
  const MatrixXd q_hat = normalize_rows(q, q_norm);
  const MatrixXd w_hat = normalize_rows(p.head.weights, w_norm);
  const double s = p.head.scale;

  const MatrixXd lp_t = log_softmax_rows(s * t_hat * w_hat.transpose());
  const MatrixXd lp_q = log_softmax_rows(s * q_hat * w_hat.transpose());
  const MatrixXd p_t = lp_t.array().exp().matrix();
  const MatrixXd p_q = lp_q.array().exp().matrix();
  const MatrixXd log_ratio = lp_t - lp_q;

  const VectorXd cos_tq = (t_hat.array() * q_hat.array()).rowwise().sum();
  const double inv_b = 1.0 / static_cast<double>(b);

  LossValue v;
  v.sim = (1.0 - cos_tq.array()).sum() * inv_b;
  double ce_t = 0.0, ce_q = 0.0;
  for (Index i = 0; i < b; ++i) {
    const int y = batch.labels[static_cast<std::size_t>(i)];
    ce_t -= lp_t(i, y);
    ce_q -= lp_q(i, y);
  }
  v.cls = (ce_t + ce_q) * inv_b;
  const double kl_tq = (p_t.array() * log_ratio.array()).sum() * inv_b;
  const double kl_qt = -(p_q.array() * log_ratio.array()).sum() * inv_b;
  switch (cfg.kl_mode) {
    case KlMode::kSymmetric: v.kl = kl_tq + kl_qt; break;
    case KlMode::kGalleryToQuery: v.kl = kl_tq; break;
    case KlMode::kQueryToGallery: v.kl = kl_qt; break;
  }
  v.total = cfg.lambda_sim * v.sim + cfg.lambda_kl * v.kl + cfg.lambda_cls * v.cls;
  if (grad == nullptr) return v;

  // d/d(logits).
  MatrixXd d_lt = p_t;
  MatrixXd d_lq = p_q;
  for (Index i = 0; i < b; ++i) {
    const int y = batch.labels[static_cast<std::size_t>(i)];
    d_lt(i, y) -= 1.0;
    d_lq(i, y) -= 1.0;
  }
  d_lt *= cfg.lambda_cls * inv_b;
  d_lq *= cfg.lambda_cls * inv_b;
  if (cfg.lambda_kl != 0.0) {
    const double k = cfg.lambda_kl * inv_b;
    // KL(p_t || p_q): d/da = p_t (r - <p_t, r>), d/db = p_q - p_t  (r = lp_t - lp_q)
    // KL(p_q || p_t): d/db = p_q (-r + <p_q, r>), d/da = p_t - p_q
    const VectorXd pt_r = (p_t.array() * log_ratio.array()).rowwise().sum();
    const VectorXd pq_r = (p_q.array() * log_ratio.array()).rowwise().sum();
    if (cfg.kl_mode != KlMode::kQueryToGallery) {
      d_lt += k * (p_t.array() * (log_ratio.colwise() - pt_r).array()).matrix();
      d_lq += k * (p_q - p_t);
    }
    if (cfg.kl_mode != KlMode::kGalleryToQuery) {
      d_lq += k * (p_q.array() * ((-log_ratio).colwise() + pq_r).array()).matrix();
      d_lt += k * (p_t - p_q);
    }
  }

  MatrixXd d_t_hat = s * d_lt * w_hat - (cfg.lambda_sim * inv_b) * q_hat;
  MatrixXd d_q_hat = s * d_lq * w_hat - (cfg.lambda_sim * inv_b) * t_hat;
  const MatrixXd d_w_hat = s * (d_lt.transpose() * t_hat + d_lq.transpose() * q_hat);
  grad->head.weights += normalize_rows_backward(w_hat, w_norm, d_w_hat);

  const MatrixXd d_t = normalize_rows_backward(t_hat, t_norm, d_t_hat);
  if (p.query_net) {
    const MatrixXd d_q = normalize_rows_backward(q_hat, q_norm, d_q_hat);
    backward_batch(*p.query_net, *qcache, d_q, *grad->query_net);
  }

  switch (fusion) {
    case Fusion::kIndependent:
    case Fusion::kConcat:
      backward_batch(p.nets[0], caches[0], d_t, grad->nets[0]);
      break;
    case Fusion::kE2eMean: {
      const MatrixXd d_y = d_t / static_cast<double>(p.nets.size());
      for (std::size_t i = 0; i < p.nets.size(); ++i) {
        backward_batch(p.nets[i], caches[i], d_y, grad->nets[i]);
      }
      break;
    }
    case Fusion::kE2eWeighted: {
      const Index n = static_cast<Index>(p.nets.size());
      MatrixXd d_w(b, n);
      for (Index i = 0; i < n; ++i) {
        d_w.col(i) = (d_t.array() * outputs[static_cast<std::size_t>(i)].array()).rowwise().sum();
      }
      const VectorXd mean_dw = (fusion_w.array() * d_w.array()).rowwise().sum();
      const MatrixXd d_s = (fusion_w.array() * (d_w.colwise() - mean_dw).array()).matrix();
      for (Index i = 0; i < n; ++i) {
        const auto k = static_cast<std::size_t>(i);
        const auto& net = p.nets[k];
        auto& g = grad->nets[k];
        g.weight_w += d_s.col(i).transpose() * outputs[k];
        g.weight_b(0, 0) += d_s.col(i).sum();
        const MatrixXd d_y = fusion_w.col(i).asDiagonal() * d_t + d_s.col(i) * net.weight_w;
        backward_batch(net, caches[k], d_y, g);
      }
      break;
    }
  }
  return v;
}

double grad_check(const Trainables& p, const PairBatch& batch, const TrainConfig& cfg,
                  Fusion fusion, std::size_t probes, std::uint64_t seed) {
  if (probes == 0) throw InvalidConfig("grad_check needs at least one probe");
  Trainables grad = p.zeros_like();
  loss_and_grad(p, batch, cfg, fusion, &grad);

  Trainables work = p;
  std::vector<double*> params;
  work.for_each_param([&](Eigen::MatrixXd& m) {
    for (Index i = 0; i < m.size(); ++i) params.push_back(m.data() + i);
  });
  std::vector<const double*> analytic;
  grad.for_each_param([&](const Eigen::MatrixXd& m) {
    for (Index i = 0; i < m.size(); ++i) analytic.push_back(m.data() + i);
  });

  constexpr double h = 1e-4;
  const std::vector<bool> base = activation_pattern(p, batch, fusion);
  Rng rng(derive_seed(seed, "grad-check"));
  double worst = 0.0;
  std::size_t done = 0;
  std::size_t redraws = 0;
  const std::size_t max_redraws = 100 * probes;
  while (done < probes) {
    const auto idx = static_cast<std::size_t>(rng.below(params.size()));
    double* x = params[idx];
    const double saved = *x;
    *x = saved + h;
    const double up = loss_and_grad(work, batch, cfg, fusion, nullptr).total;
    bool kink = activation_pattern(work, batch, fusion) != base;
    *x = saved - h;
    const double down = loss_and_grad(work, batch, cfg, fusion, nullptr).total;
    kink = kink || activation_pattern(work, batch, fusion) != base;
    *x = saved;
    // The difference quotient straddles a rectifier kink there: draw again.
    if (kink && redraws < max_redraws) {
      ++redraws;
      continue;
    }
    const double fd = (up - down) / (2.0 * h);
    const double a = *analytic[idx];
    const double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-8});
    worst = std::max(worst, rel);
    ++done;
  }
  return worst;
}

}  // namespace cmce
