#pragma once

#include <array>
#include <cstdint>
#include <string>

#include <Eigen/Dense>

#include "cmce/embedding.hpp"

namespace cmce {

inline constexpr std::size_t kNumBlocks = 4;
inline constexpr std::size_t kReductionRatio = 4;
inline constexpr double kLeakySlope = 0.1;

// Residual bottleneck block: x + expand(leaky(reduce(x))).
struct BottleneckBlock {
  Eigen::MatrixXd reduce_w;  // (m/r) x m
  Eigen::MatrixXd reduce_b;  // (m/r) x 1
  Eigen::MatrixXd expand_w;  // m x (m/r)
  Eigen::MatrixXd expand_b;  // m x 1
};

// Input projection followed by four residual bottleneck blocks. The optional
// weight head scores the net's output with a single scalar, used only by the
// weighted joint-averaging variant.
struct TransformNet {
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  Eigen::MatrixXd proj_w;  // m x n
  Eigen::MatrixXd proj_b;  // m x 1
  std::array<BottleneckBlock, kNumBlocks> blocks;
  bool has_weight_head = false;
  Eigen::MatrixXd weight_w;  // 1 x m
  Eigen::MatrixXd weight_b;  // 1 x 1

  std::size_t bottleneck_dim() const noexcept { return out_dim / kReductionRatio; }

  // Visits every trainable matrix in a fixed order.
  template <typename F>
  void for_each_param(F&& f) {
    f(proj_w);
    f(proj_b);
    for (auto& b : blocks) {
      f(b.reduce_w);
      f(b.reduce_b);
      f(b.expand_w);
      f(b.expand_b);
    }
    if (has_weight_head) {
      f(weight_w);
      f(weight_b);
    }
  }
  template <typename F>
  void for_each_param(F&& f) const {
    const_cast<TransformNet*>(this)->for_each_param(
        [&](Eigen::MatrixXd& m) { f(static_cast<const Eigen::MatrixXd&>(m)); });
  }

  std::size_t num_params() const;
  TransformNet zeros_like() const;
};

// Projection init: identity when n == m, an averaging stack [I/k ... I/k]
// when n == k*m, an identity with zero rows when n < m, otherwise seeded
// uniform(+-1/sqrt(n)). Reduce matrices are seeded uniform(+-1/sqrt(m));
// expand matrices, all biases and the weight head start at zero, so the net
// starts as its projection.
TransformNet init_transform(std::size_t n, std::size_t m, std::uint64_t seed,
                            bool with_weight_head);

// Activations kept for the backward pass. Rows are batch items.
struct ForwardCache {
  Eigen::MatrixXd input;
  std::array<Eigen::MatrixXd, kNumBlocks + 1> hidden;  // hidden[0] = projection
  std::array<Eigen::MatrixXd, kNumBlocks> pre;         // reduce pre-activations
  std::array<Eigen::MatrixXd, kNumBlocks> act;
  const Eigen::MatrixXd& output() const { return hidden[kNumBlocks]; }
};

Eigen::MatrixXd forward_batch(const TransformNet& net, const Eigen::MatrixXd& x);
ForwardCache forward_cached(const TransformNet& net, const Eigen::MatrixXd& x);

// Accumulates parameter gradients into grad (same shapes as net) and returns
// d(loss)/d(input). The weight head is not touched here.
Eigen::MatrixXd backward_batch(const TransformNet& net, const ForwardCache& cache,
                               const Eigen::MatrixXd& d_output, TransformNet& grad);

// Single-vector forward. The output is not normalized.
EmbeddingVector forward(const TransformNet& net, const EmbeddingVector& e);

// Rows of a set as a matrix (count x dim), and back.
Eigen::MatrixXd to_matrix(const EmbeddingSet& set);
EmbeddingSet transform_set(const TransformNet& net, const EmbeddingSet& set,
                           const std::string& model_id);

}  // namespace cmce
