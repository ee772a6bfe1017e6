#include "cmce/transform_net.hpp"

#include <cmath>

#include "cmce/error.hpp"
#include "cmce/random.hpp"

namespace cmce {

namespace {

void fill_uniform(Eigen::MatrixXd& m, double bound, Rng& rng) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = rng.uniform(-bound, bound);
  }
}

Eigen::MatrixXd leaky(const Eigen::MatrixXd& z) {
  return z.unaryExpr([](double v) { return v > 0.0 ? v : kLeakySlope * v; });
}

Eigen::MatrixXd leaky_grad(const Eigen::MatrixXd& z, const Eigen::MatrixXd& upstream) {
  return upstream.binaryExpr(z, [](double g, double v) { return v > 0.0 ? g : kLeakySlope * g; });
}

}  // namespace

std::size_t TransformNet::num_params() const {
  std::size_t n = 0;
  for_each_param([&](const Eigen::MatrixXd& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

TransformNet TransformNet::zeros_like() const {
  TransformNet z = *this;
  z.for_each_param([](Eigen::MatrixXd& m) { m.setZero(); });
  return z;
}

TransformNet init_transform(std::size_t n, std::size_t m, std::uint64_t seed,
                            bool with_weight_head) {
  if (n < 1) throw InvalidConfig("transform input dim must be >= 1");
  if (m < kReductionRatio || m % kReductionRatio != 0) {
    throw InvalidConfig("transform output dim " + std::to_string(m) +
                        " must be a positive multiple of " + std::to_string(kReductionRatio));
  }
  const auto ni = static_cast<Eigen::Index>(n);
  const auto mi = static_cast<Eigen::Index>(m);
  const auto ki = static_cast<Eigen::Index>(m / kReductionRatio);

  TransformNet net;
  net.in_dim = n;
  net.out_dim = m;
  Rng rng(derive_seed(seed, "transform-init"));

  net.proj_w = Eigen::MatrixXd::Zero(mi, ni);
  if (n % m == 0) {
    const Eigen::Index k = ni / mi;
    for (Eigen::Index b = 0; b < k; ++b) {
      net.proj_w.block(0, b * mi, mi, mi) =
          Eigen::MatrixXd::Identity(mi, mi) / static_cast<double>(k);
    }
  } else if (n < m) {
    net.proj_w.topRows(ni) = Eigen::MatrixXd::Identity(ni, ni);
  } else {
    fill_uniform(net.proj_w, 1.0 / std::sqrt(static_cast<double>(n)), rng);
  }
  net.proj_b = Eigen::MatrixXd::Zero(mi, 1);

  for (auto& block : net.blocks) {
    block.reduce_w.resize(ki, mi);
    fill_uniform(block.reduce_w, 1.0 / std::sqrt(static_cast<double>(m)), rng);
    block.reduce_b = Eigen::MatrixXd::Zero(ki, 1);
    block.expand_w = Eigen::MatrixXd::Zero(mi, ki);
    block.expand_b = Eigen::MatrixXd::Zero(mi, 1);
  }
  net.has_weight_head = with_weight_head;
  if (with_weight_head) {
    net.weight_w = Eigen::MatrixXd::Zero(1, mi);
    net.weight_b = Eigen::MatrixXd::Zero(1, 1);
  }
  return net;
}

ForwardCache forward_cached(const TransformNet& net, const Eigen::MatrixXd& x) {
  if (x.cols() != static_cast<Eigen::Index>(net.in_dim)) {
    throw DimensionMismatch("transform input has dim " + std::to_string(x.cols()) +
                            ", net expects " + std::to_string(net.in_dim));
  }
  ForwardCache c;
  c.input = x;
  c.hidden[0] = (x * net.proj_w.transpose()).rowwise() + net.proj_b.col(0).transpose();
  for (std::size_t i = 0; i < kNumBlocks; ++i) {
    const auto& b = net.blocks[i];
    c.pre[i] = (c.hidden[i] * b.reduce_w.transpose()).rowwise() + b.reduce_b.col(0).transpose();
    c.act[i] = leaky(c.pre[i]);
    c.hidden[i + 1] = c.hidden[i] + ((c.act[i] * b.expand_w.transpose()).rowwise() +
                                     b.expand_b.col(0).transpose());
  }
  return c;
}

Eigen::MatrixXd forward_batch(const TransformNet& net, const Eigen::MatrixXd& x) {
  if (x.cols() != static_cast<Eigen::Index>(net.in_dim)) {
    throw DimensionMismatch("transform input has dim " + std::to_string(x.cols()) +
                            ", net expects " + std::to_string(net.in_dim));
  }
  Eigen::MatrixXd h = (x * net.proj_w.transpose()).rowwise() + net.proj_b.col(0).transpose();
  for (const auto& b : net.blocks) {
    Eigen::MatrixXd a =
        leaky((h * b.reduce_w.transpose()).rowwise() + b.reduce_b.col(0).transpose());
    h += (a * b.expand_w.transpose()).rowwise() + b.expand_b.col(0).transpose();
  }
  return h;
}

Eigen::MatrixXd backward_batch(const TransformNet& net, const ForwardCache& cache,
                               const Eigen::MatrixXd& d_output, TransformNet& grad) {
  Eigen::MatrixXd dh = d_output;
  for (std::size_t r = kNumBlocks; r-- > 0;) {
    const auto& b = net.blocks[r];
    auto& g = grad.blocks[r];
    g.expand_w.noalias() += dh.transpose() * cache.act[r];
    g.expand_b += dh.colwise().sum().transpose();
    const Eigen::MatrixXd dz = leaky_grad(cache.pre[r], dh * b.expand_w);
    g.reduce_w.noalias() += dz.transpose() * cache.hidden[r];
    g.reduce_b += dz.colwise().sum().transpose();
    dh.noalias() += dz * b.reduce_w;
  }
  grad.proj_w.noalias() += dh.transpose() * cache.input;
  grad.proj_b += dh.colwise().sum().transpose();
  return dh * net.proj_w;
}

EmbeddingVector forward(const TransformNet& net, const EmbeddingVector& e) {
  if (e.dim() != net.in_dim) {
    throw DimensionMismatch("transform input has dim " + std::to_string(e.dim()) +
                            ", net expects " + std::to_string(net.in_dim));
  }
  Eigen::MatrixXd x(1, static_cast<Eigen::Index>(e.dim()));
  for (std::size_t i = 0; i < e.dim(); ++i) x(0, static_cast<Eigen::Index>(i)) = e[i];
  const Eigen::MatrixXd y = forward_batch(net, x);
  return EmbeddingVector(std::vector<double>(y.data(), y.data() + y.size()));
}

Eigen::MatrixXd to_matrix(const EmbeddingSet& set) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(set.size()), static_cast<Eigen::Index>(set.dim()));
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto v = set[i].vector.values();
    for (std::size_t k = 0; k < v.size(); ++k) {
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = v[k];
    }
  }
  return m;
}

EmbeddingSet transform_set(const TransformNet& net, const EmbeddingSet& set,
                           const std::string& model_id) {
  const Eigen::MatrixXd y = forward_batch(net, to_matrix(set));
  EmbeddingSet out(model_id, net.out_dim);
  std::vector<double> row(net.out_dim);
  for (std::size_t i = 0; i < set.size(); ++i) {
    for (std::size_t k = 0; k < net.out_dim; ++k) {
      row[k] = y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
    }
    out.add(EmbeddingVector(row), set[i].class_label, set[i].item_id);
  }
  return out;
}

}  // namespace cmce
