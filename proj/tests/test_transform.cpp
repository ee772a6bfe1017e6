#include <cmath>

#include <gtest/gtest.h>

#include "cmce/error.hpp"
#include "cmce/evalproto.hpp"
#include "cmce/param_io.hpp"
#include "cmce/synthworld.hpp"
#include "cmce/trainer.hpp"
#include "fixtures.hpp"

namespace cmce {
namespace {

using Eigen::Index;
using Eigen::MatrixXd;

// Straight-line forward pass with explicit loops.
std::vector<double> oracle_forward(const TransformNet& net, const std::vector<double>& x) {
  std::vector<double> h(net.out_dim, 0.0);
  for (std::size_t i = 0; i < net.out_dim; ++i) {
    double s = net.proj_b(static_cast<Index>(i), 0);
    for (std::size_t k = 0; k < net.in_dim; ++k) s += net.proj_w(static_cast<Index>(i), static_cast<Index>(k)) * x[k];
    h[i] = s;
  }
  const std::size_t r = net.out_dim / 4;
  for (const auto& b : net.blocks) {
    std::vector<double> a(r);
    for (std::size_t j = 0; j < r; ++j) {
      double z = b.reduce_b(static_cast<Index>(j), 0);
      for (std::size_t k = 0; k < net.out_dim; ++k) z += b.reduce_w(static_cast<Index>(j), static_cast<Index>(k)) * h[k];
      a[j] = z > 0 ? z : 0.1 * z;
    }
    std::vector<double> next(h);
    for (std::size_t i = 0; i < net.out_dim; ++i) {
      double s = b.expand_b(static_cast<Index>(i), 0);
      for (std::size_t j = 0; j < r; ++j) s += b.expand_w(static_cast<Index>(i), static_cast<Index>(j)) * a[j];
      next[i] += s;
    }
    h = next;
  }
  return h;
}

std::vector<double> row(const MatrixXd& m, Index i) {
  std::vector<double> v(static_cast<std::size_t>(m.cols()));
  for (Index k = 0; k < m.cols(); ++k) v[static_cast<std::size_t>(k)] = m(i, k);
  return v;
}

double norm(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s / (norm(a) * norm(b));
}

std::vector<double> log_softmax(const std::vector<double>& z) {
  double mx = z[0];
  for (double x : z) mx = std::max(mx, x);
  double s = 0;
  for (double x : z) s += std::exp(x - mx);
  std::vector<double> out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = z[i] - mx - std::log(s);
  return out;
}

struct OracleLoss {
  double sim = 0, kl = 0, cls = 0;
};

// Loss terms evaluated item by item from the definitions, for single-net or
// mean-fused gallery sides and an identity or net query side.
OracleLoss oracle_loss(const Trainables& p, const PairBatch& batch, Fusion fusion) {
  OracleLoss out;
  const auto b = static_cast<Index>(batch.size());
  for (Index i = 0; i < b; ++i) {
    std::vector<double> t(p.nets[0].out_dim, 0.0);
    for (std::size_t n = 0; n < p.nets.size(); ++n) {
      const auto y = oracle_forward(p.nets[n], row(batch.gallery[n], i));
      for (std::size_t k = 0; k < t.size(); ++k) t[k] += y[k] / static_cast<double>(p.nets.size());
    }
    if (fusion == Fusion::kIndependent) EXPECT_EQ(p.nets.size(), 1u);
    const std::vector<double> q =
        p.query_net ? oracle_forward(*p.query_net, row(batch.query, i)) : row(batch.query, i);
    std::vector<double> zt, zq;
    for (Index c = 0; c < p.head.weights.rows(); ++c) {
      const auto w = row(p.head.weights, c);
      zt.push_back(p.head.scale * cosine(w, t));
      zq.push_back(p.head.scale * cosine(w, q));
    }
    const auto lt = log_softmax(zt), lq = log_softmax(zq);
    const auto y = static_cast<std::size_t>(batch.labels[static_cast<std::size_t>(i)]);
    out.sim += 1.0 - cosine(t, q);
    out.cls += -lt[y] - lq[y];
    for (std::size_t c = 0; c < lt.size(); ++c) {
      out.kl += std::exp(lt[c]) * (lt[c] - lq[c]) + std::exp(lq[c]) * (lq[c] - lt[c]);
    }
  }
  out.sim /= static_cast<double>(b);
  out.kl /= static_cast<double>(b);
  out.cls /= static_cast<double>(b);
  return out;
}

TEST(Init, Examples) {
  const auto net = init_transform(64, 64, 1, false);
  Rng rng(2);
  std::vector<double> v(64);
  for (auto& x : v) x = rng.normal();
  const auto out = forward(net, EmbeddingVector(v));
  for (std::size_t i = 0; i < 64; ++i) EXPECT_NEAR(out[i], v[i], 1e-9);
  std::vector<double> zero(64, 0.0);
  EXPECT_EQ(forward(net, EmbeddingVector(zero)), EmbeddingVector(zero));

  const auto a = init_transform(48, 32, 5, true), b = init_transform(48, 32, 5, true);
  std::vector<MatrixXd> pa, pb;
  a.for_each_param([&](const MatrixXd& m) { pa.push_back(m); });
  b.for_each_param([&](const MatrixXd& m) { pb.push_back(m); });
  EXPECT_EQ(pa, pb);
  EXPECT_THROW(init_transform(64, 62, 1, false), InvalidConfig);
  EXPECT_THROW(forward(net, EmbeddingVector(std::vector<double>(10, 1.0))), DimensionMismatch);
}

TEST(Init, ProjectionShapes) {
  const auto avg = init_transform(128, 64, 1, false);
  Rng rng(3);
  std::vector<double> v(64);
  for (auto& x : v) x = rng.normal();
  std::vector<double> twice(v);
  twice.insert(twice.end(), v.begin(), v.end());
  const auto out = forward(avg, EmbeddingVector(twice));
  for (std::size_t i = 0; i < 64; ++i) EXPECT_NEAR(out[i], v[i], 1e-12);

  const auto pad = init_transform(32, 64, 1, false);
  const auto small = forward(pad, EmbeddingVector(std::vector<double>(32, 1.0)));
  for (std::size_t i = 0; i < 64; ++i) EXPECT_EQ(small[i], i < 32 ? 1.0 : 0.0);
}

TEST(Forward, MatchesLoopOracle) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    auto in = fixture::random_instance(Variant::kM2M, seed, 8, 0.5);
    const auto& net = in.params.nets[0];
    const MatrixXd y = forward_batch(net, in.batch.gallery[0]);
    for (Index i = 0; i < y.rows(); ++i) {
      const auto o = oracle_forward(net, row(in.batch.gallery[0], i));
      for (Index k = 0; k < y.cols(); ++k) EXPECT_NEAR(y(i, k), o[static_cast<std::size_t>(k)], 1e-10);
    }
  }
}

TEST(Loss, CoincidentInputsHaveZeroSimAndKl) {
  auto in = fixture::random_instance(Variant::kM2M, 4);
  auto& p = in.params;
  p.nets[0] = init_transform(16, 16, 1, false);
  in.batch.gallery[0] = in.batch.query;
  TrainConfig cfg;
  const auto v = loss_and_grad(p, in.batch, cfg, in.fusion, nullptr);
  EXPECT_EQ(v.kl, 0.0);
  EXPECT_NEAR(v.sim, 0.0, 1e-15);
  EXPECT_LT(grad_check(p, in.batch, cfg, in.fusion, 50, 1), 1e-6);
}

TEST(Loss, ClassificationTermMatchesStandaloneSoftmax) {
  TrainConfig cfg;
  cfg.lambda_sim = 0;
  cfg.lambda_kl = 0;
  cfg.lambda_cls = 1;
  for (Variant v : {Variant::kM2M, Variant::kUnified, Variant::kE2eMean}) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const auto in = fixture::random_instance(v, seed, 16, 0.3);
      const auto got = loss_and_grad(in.params, in.batch, cfg, in.fusion, nullptr);
      const auto want = oracle_loss(in.params, in.batch, in.fusion);
      EXPECT_NEAR(got.total, want.cls, 1e-10);
      EXPECT_NEAR(got.sim, want.sim, 1e-10);
      EXPECT_NEAR(got.kl, want.kl, 1e-10);
    }
  }
}

TEST(Loss, DecomposesIntoWeightedTerms) {
  for (Variant v : fixture::all_variants()) {
    const auto in = fixture::random_instance(v, 7);
    auto one_hot = [&](double a, double b, double c) {
      TrainConfig cfg;
      cfg.lambda_sim = a;
      cfg.lambda_kl = b;
      cfg.lambda_cls = c;
      return loss_and_grad(in.params, in.batch, cfg, in.fusion, nullptr).total;
    };
    const double l1 = one_hot(1, 0, 0), l2 = one_hot(0, 1, 0), l3 = one_hot(0, 0, 1);
    EXPECT_NEAR(one_hot(0.3, 2.0, 0.7), 0.3 * l1 + 2.0 * l2 + 0.7 * l3, 1e-10) << to_string(v);
  }
}

TEST(Loss, CosineTermsIgnoreInputScale) {
  for (Variant v : fixture::all_variants()) {
    auto in = fixture::random_instance(v, 9);
    // Zero biases make every net positively homogeneous, so gallery-side
    // scaling also passes through.
    in.params.for_each_param([](MatrixXd& m) {
      if (m.cols() == 1) m.setZero();
    });
    for (auto& n : in.params.nets) {
      if (n.has_weight_head) n.weight_w.setZero();
    }
    TrainConfig cfg;
    const auto base = loss_and_grad(in.params, in.batch, cfg, in.fusion, nullptr);
    PairBatch scaled = in.batch;
    scaled.query *= 3.7;
    for (auto& g : scaled.gallery) g *= 0.02;
    const auto s = loss_and_grad(in.params, scaled, cfg, in.fusion, nullptr);
    EXPECT_NEAR(s.sim, base.sim, 1e-9) << to_string(v);
    EXPECT_NEAR(s.kl, base.kl, 1e-9) << to_string(v);
  }
}

TEST(Loss, ShapeErrors) {
  auto in = fixture::random_instance(Variant::kE2eMean, 3);
  TrainConfig cfg;
  EXPECT_THROW(loss_and_grad(in.params, in.batch, cfg, Fusion::kE2eWeighted, nullptr), InvalidConfig);
  EXPECT_THROW(loss_and_grad(in.params, in.batch, cfg, Fusion::kIndependent, nullptr), InvalidConfig);
  PairBatch bad = in.batch;
  bad.labels.pop_back();
  EXPECT_THROW(loss_and_grad(in.params, bad, cfg, in.fusion, nullptr), DimensionMismatch);
  bad = in.batch;
  bad.labels[0] = 99;
  EXPECT_THROW(loss_and_grad(in.params, bad, cfg, in.fusion, nullptr), InvalidConfig);
  EXPECT_THROW(grad_check(in.params, in.batch, cfg, in.fusion, 0, 1), InvalidConfig);
  cfg.lambda_sim = cfg.lambda_kl = cfg.lambda_cls = 0;
  EXPECT_THROW(cfg.validate(), InvalidConfig);
}

TEST(Gradient, AllVariantsMatchFiniteDifferences) {
  TrainConfig cfg;
  for (Variant v : fixture::all_variants()) {
    for (std::uint64_t seed = 100; seed < 105; ++seed) {
      const auto in = fixture::random_instance(v, seed);
      EXPECT_LT(grad_check(in.params, in.batch, cfg, in.fusion, 100, seed), 1e-4)
          << to_string(v) << " seed " << seed;
    }
  }
}

TEST(Gradient, AsymmetricKlModes) {
  for (KlMode mode : {KlMode::kGalleryToQuery, KlMode::kQueryToGallery}) {
    TrainConfig cfg;
    cfg.kl_mode = mode;
    const auto in = fixture::random_instance(Variant::kUnified, 21);
    EXPECT_LT(grad_check(in.params, in.batch, cfg, in.fusion, 100, 3), 1e-4);
  }
}

// ---- training on the synthetic world ----------------------------------------

std::vector<std::uint32_t> range(std::uint32_t b, std::uint32_t e) {
  std::vector<std::uint32_t> v;
  for (std::uint32_t i = b; i < e; ++i) v.push_back(i);
  return v;
}

TEST(Train, SelfMapKeepsSimilarityLossNearZero) {
  const auto w = make_world(WorldConfig{});
  const auto m = spawn_model(w, ArchFamily::kA, 64, 0.05, 3);
  const auto set = generate_split(w, m, range(0, 150), 8, 0);
  TrainSpec spec{Variant::kM2M, {set}, set, {}};
  spec.cfg.epochs = 200;
  const auto t = train(spec);
  const PairBatch full = make_batch({set}, set, t.class_labels);
  const auto v = loss_and_grad(t.params, full, spec.cfg, Fusion::kIndependent, nullptr);
  EXPECT_LT(v.sim, 0.01);
}

TEST(Train, LinearMapIsRecoveredOnHeldOutClasses) {
  const auto w = make_world(WorldConfig{});
  const auto q = spawn_model(w, ArchFamily::kA, 64, 0.0, 1);
  const auto g = spawn_model(w, ArchFamily::kA, 64, 0.0, 2);
  TrainSpec spec{Variant::kM2M,
                 {generate_split(w, g, range(0, 150), 8, 0)},
                 generate_split(w, q, range(0, 150), 8, 0),
                 {}};
  spec.cfg.epochs = 100;
  spec.cfg.learning_rate = 3e-3;
  const auto t = train(spec);

  const auto held = range(150, 250);
  const auto probes = to_probes(generate_split(w, q, held, 6, 2));
  const double symmetric = recall_at_1(build_index(generate_split(w, q, held, 2, 0)), probes);
  const auto mapped = t.apply_gallery({generate_split(w, g, held, 2, 0)}, "g");
  const double cross = recall_at_1(build_index(mapped), probes);
  EXPECT_GE(cross, 0.95 * symmetric) << "cross " << cross << " symmetric " << symmetric;
}

TEST(Train, SmoothedLossIsNonIncreasingAndRunsAreDeterministic) {
  const auto w = make_world(WorldConfig{});
  const auto q = spawn_model(w, ArchFamily::kA, 64, 0.05, 1);
  const auto g = spawn_model(w, ArchFamily::kB, 64, 0.05, 2);
  TrainSpec spec{Variant::kM2M,
                 {generate_split(w, g, range(0, 150), 8, 0)},
                 generate_split(w, q, range(0, 150), 8, 0),
                 {}};
  spec.cfg.epochs = 100;
  spec.cfg.learning_rate = 3e-3;
  spec.cfg.seed = 17;
  const auto t = train(spec);
  const auto& h = t.loss_history;
  ASSERT_EQ(h.size(), 100u);
  std::vector<double> smooth;
  for (std::size_t i = 0; i + 5 <= h.size(); ++i) {
    double s = 0;
    for (std::size_t k = i; k < i + 5; ++k) s += h[k];
    smooth.push_back(s / 5);
  }
  for (std::size_t i = 1; i < smooth.size(); ++i) EXPECT_LE(smooth[i], smooth[i - 1]) << "epoch " << i;

  spec.cfg.epochs = 3;
  const auto a = train(spec), b = train(spec);
  EXPECT_EQ(encode_transform(a), encode_transform(b));
  EXPECT_EQ(a.loss_history, b.loss_history);
}

TEST(Train, VariantsRejectWrongInputs) {
  const auto w = make_world(16, 6, 0.15, 1);
  const auto q = spawn_model(w, ArchFamily::kA, 16, 0.05, 1);
  const auto g = spawn_model(w, ArchFamily::kA, 16, 0.05, 2);
  const auto sq = generate_split(w, q, range(0, 6), 4, 0);
  const auto sg = generate_split(w, g, range(0, 6), 4, 0);
  TrainSpec spec{Variant::kM2M, {sg, sg}, sq, {}};
  spec.cfg.epochs = 1;
  EXPECT_THROW(train(spec), InvalidConfig);
  spec.variant = Variant::kUnified;
  EXPECT_THROW(train(spec), InvalidConfig);
  spec.variant = Variant::kE2eMean;
  spec.gallery_sets = {generate_split(w, g, range(0, 6), 4, 10)};
  EXPECT_THROW(train(spec), InvalidConfig);
  EXPECT_THROW(parse_variant("bogus"), InvalidConfig);
}

// ---- parameter files -------------------------------------------------------

TrainedTransform small_transform(Variant v, std::uint64_t seed) {
  const auto w = make_world(16, 6, 0.15, seed);
  const auto q = spawn_model(w, ArchFamily::kA, 16, 0.05, 1);
  std::vector<EmbeddingSet> gs;
  for (std::uint64_t k = 0; k < 3; ++k) {
    gs.push_back(generate_split(w, spawn_model(w, ArchFamily::kC, 8 + 4 * k, 0.05, 10 + k),
                                range(0, 6), 4, 0));
  }
  if (v == Variant::kM2M || v == Variant::kUnified) gs.resize(1);
  TrainSpec spec{v, gs, generate_split(w, q, range(0, 6), 4, 0), {}};
  spec.cfg.epochs = 3;
  spec.cfg.seed = seed;
  auto t = train(spec);
  quantize_f32(t.params);
  return t;
}

TEST(ParamIo, RoundTripIsBitExact) {
  for (Variant v : fixture::all_variants()) {
    const auto t = small_transform(v, 3);
    const std::string bytes = encode_transform(t);
    const auto r = decode_transform(bytes);
    EXPECT_EQ(r.variant, t.variant);
    EXPECT_EQ(r.cfg, t.cfg);
    EXPECT_EQ(r.class_labels, t.class_labels);
    EXPECT_EQ(r.loss_history, t.loss_history);
    std::vector<MatrixXd> a, b;
    t.params.for_each_param([&](const MatrixXd& m) { a.push_back(m); });
    r.params.for_each_param([&](const MatrixXd& m) { b.push_back(m); });
    EXPECT_EQ(a, b) << to_string(v);
    EXPECT_EQ(r.params.head.scale, t.params.head.scale);
    EXPECT_EQ(encode_transform(r), bytes);
  }
}

TEST(ParamIo, CorruptFiles) {
  const std::string good = encode_transform(small_transform(Variant::kUnified, 4));
  std::string bad = good;
  bad[1] = 'X';
  EXPECT_THROW(decode_transform(bad), FormatError);
  EXPECT_THROW(decode_transform(good.substr(0, good.size() - 1)), FormatError);
  EXPECT_THROW(decode_transform(good + "x"), FormatError);
  EXPECT_THROW(read_transform("/nonexistent/t.cmct"), IoError);
}

}  // namespace
}  // namespace cmce
