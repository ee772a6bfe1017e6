#pragma once

#include <cstdint>
#include <vector>

#include "cmce/loss.hpp"
#include "cmce/random.hpp"
#include "cmce/trainer.hpp"

namespace cmce::fixture {

struct LossInstance {
  Trainables params;
  PairBatch batch;
  Fusion fusion = Fusion::kIndependent;
};

inline Eigen::MatrixXd gaussian(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

// Randomized loss instance for a variant: nets initialized as the trainer
// does, then every parameter moved by `amplitude` * N(0, 1). Gallery models
// get different input dims; the joint variants use three of them.
inline LossInstance random_instance(Variant v, std::uint64_t seed, std::size_t batch = 16,
                                    double amplitude = 0.1) {
  Rng rng(seed);
  const std::size_t m = 16, classes = 5;
  const bool joint = v == Variant::kE2eMean || v == Variant::kE2eWeighted || v == Variant::kConcat;
  const std::vector<std::size_t> dims = joint ? std::vector<std::size_t>{16, 12, 20}
                                              : std::vector<std::size_t>{12};
  LossInstance in;
  in.fusion = fusion_of(v);
  auto& p = in.params;
  if (v == Variant::kConcat) {
    p.nets.push_back(init_transform(48, m, rng.next_u64(), false));
  } else {
    for (std::size_t d : dims) {
      p.nets.push_back(init_transform(d, m, rng.next_u64(), v == Variant::kE2eWeighted));
    }
  }
  if (v == Variant::kUnified) p.query_net = init_transform(m, m, rng.next_u64(), false);
  p.head = init_head(classes, m, 16.0, rng.next_u64());
  p.for_each_param([&](Eigen::MatrixXd& w) { w += amplitude * gaussian(rng, w.rows(), w.cols()); });

  const auto b = static_cast<Eigen::Index>(batch);
  for (std::size_t d : dims) in.batch.gallery.push_back(gaussian(rng, b, static_cast<Eigen::Index>(d)));
  in.batch.query = gaussian(rng, b, static_cast<Eigen::Index>(m));
  for (std::size_t i = 0; i < batch; ++i) in.batch.labels.push_back(static_cast<int>(rng.below(classes)));
  return in;
}

inline const std::vector<Variant>& all_variants() {
  static const std::vector<Variant> v{Variant::kM2M, Variant::kUnified, Variant::kE2eMean,
                                      Variant::kE2eWeighted, Variant::kConcat};
  return v;
}

}  // namespace cmce::fixture
