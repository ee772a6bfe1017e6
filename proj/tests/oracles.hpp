#pragma once

// Independent re-implementations used as test oracles. Everything here is a
// plain exhaustive scan over the documented definitions; none of it calls the
// library routine it checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "cmce/embedding.hpp"
#include "cmce/evalproto.hpp"
#include "cmce/random.hpp"

namespace cmce::oracle {

struct GalleryEntry {
  std::vector<double> vec;  // raw, possibly zero
  std::uint32_t label = 0;
  std::uint32_t item_id = 0;
};

inline bool zero_norm(const std::vector<double>& v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  return std::sqrt(n) <= kNormEpsilon;
}

// Cosine score with the documented evaluation arithmetic: both vectors are
// l2-normalized, then dotted left to right.
inline double score(const std::vector<double>& q, const std::vector<double>& g) {
  if (zero_norm(g)) return -std::numeric_limits<double>::infinity();
  const auto a = l2_normalize(EmbeddingVector(q)).raw();
  const auto b = l2_normalize(EmbeddingVector(g)).raw();
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

struct Top1 {
  std::uint32_t label = 0;
  std::uint32_t item_id = 0;
  double score = 0.0;
  bool found = false;
};

// Full score list, then the best entry by (score desc, item_id asc).
inline Top1 top1(const std::vector<GalleryEntry>& gallery, const std::vector<double>& q,
                 std::optional<std::uint32_t> exclude = std::nullopt) {
  std::vector<std::pair<double, std::uint32_t>> scored;
  std::vector<std::uint32_t> labels;
  for (const auto& g : gallery) {
    if (exclude && g.item_id == *exclude) continue;
    scored.emplace_back(score(q, g.vec), g.item_id);
    labels.push_back(g.label);
  }
  Top1 best;
  for (std::size_t i = 0; i < scored.size(); ++i) {
    const bool better = !best.found || scored[i].first > best.score ||
                        (scored[i].first == best.score && scored[i].second < best.item_id);
    if (better) best = {labels[i], scored[i].second, scored[i].first, true};
  }
  return best;
}

struct Operating {
  double threshold = 0.0;
  double tar = 0.0;
  double far = 0.0;
};

// Sweeps every candidate threshold (each impostor score and -inf) and keeps
// the lowest one whose false-accept count stays within far * K.
inline Operating threshold_sweep(const std::vector<double>& genuine,
                                 const std::vector<double>& impostor, double far) {
  const double k = static_cast<double>(impostor.size());
  std::vector<double> candidates(impostor);
  candidates.push_back(-std::numeric_limits<double>::infinity());
  Operating best;
  bool have = false;
  for (double t : candidates) {
    std::size_t fa = 0;
    for (double s : impostor) fa += s > t ? 1 : 0;
    if (static_cast<double>(fa) > far * k + 1e-9) continue;
    if (!have || t < best.threshold) {
      best.threshold = t;
      have = true;
    }
  }
  std::size_t ta = 0, fa = 0;
  for (double s : genuine) ta += s > best.threshold ? 1 : 0;
  for (double s : impostor) fa += s > best.threshold ? 1 : 0;
  best.tar = static_cast<double>(ta) / static_cast<double>(genuine.size());
  best.far = static_cast<double>(fa) / k;
  return best;
}

struct LabeledVec {
  std::vector<double> vec;
  std::uint32_t label = 0;
  std::uint32_t item_id = 0;
};

inline Operating open_set(const std::vector<GalleryEntry>& gallery,
                          const std::vector<LabeledVec>& mated,
                          const std::vector<LabeledVec>& nonmated, double far) {
  std::vector<double> genuine, impostor;
  for (const auto& p : nonmated) impostor.push_back(top1(gallery, p.vec).score);
  for (const auto& p : mated) {
    const Top1 t = top1(gallery, p.vec);
    genuine.push_back(t.label == p.label ? t.score : -std::numeric_limits<double>::infinity());
  }
  return threshold_sweep(genuine, impostor, far);
}

inline double recall_at_1(const std::vector<GalleryEntry>& gallery,
                          const std::vector<LabeledVec>& queries) {
  std::size_t hits = 0;
  for (const auto& q : queries) {
    const Top1 t = top1(gallery, q.vec, q.item_id);
    if (t.found && t.label == q.label) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(queries.size());
}

inline std::vector<double> random_vec(Rng& rng, std::size_t dim) {
  std::vector<double> v(dim);
  for (auto& x : v) x = rng.normal();
  return v;
}

inline EmbeddingSet to_set(const std::vector<GalleryEntry>& g, std::size_t dim) {
  EmbeddingSet s("oracle", dim);
  for (const auto& e : g) s.add(EmbeddingVector(e.vec), e.label, e.item_id);
  return s;
}

inline std::vector<Probe> to_probes(const std::vector<LabeledVec>& v) {
  std::vector<Probe> out;
  for (const auto& p : v) out.push_back({EmbeddingVector(p.vec), p.label, p.item_id});
  return out;
}

struct Instance {
  std::size_t dim = 0;
  std::vector<GalleryEntry> gallery;
  std::vector<LabeledVec> mated;
  std::vector<LabeledVec> nonmated;
};

// Clustered random retrieval instance. Item ids are shuffled so that id order
// differs from gallery order; some gallery vectors are exact duplicates (score
// ties) and one may be the zero vector (a sentinel).
inline Instance make_instance(std::uint64_t seed, std::size_t gallery_classes,
                              std::size_t per_class, std::size_t mated,
                              std::size_t nonmated_classes, std::size_t nonmated,
                              std::size_t dim) {
  Rng rng(seed);
  Instance in;
  in.dim = dim;
  const std::size_t total_classes = gallery_classes + nonmated_classes;
  std::vector<std::vector<double>> centers;
  for (std::size_t c = 0; c < total_classes; ++c) centers.push_back(random_vec(rng, dim));
  auto near = [&](std::size_t c, double spread) {
    auto v = centers[c];
    for (auto& x : v) x += spread * rng.normal();
    return v;
  };
  const double spread = rng.uniform(0.3, 1.5);
  std::vector<std::uint32_t> ids(gallery_classes * per_class + mated + nonmated);
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<std::uint32_t>(i * 3 + 1);
  shuffle(ids, rng);
  std::size_t next = 0;
  for (std::size_t c = 0; c < gallery_classes; ++c) {
    for (std::size_t k = 0; k < per_class; ++k) {
      GalleryEntry e{near(c, spread), static_cast<std::uint32_t>(c), ids[next++]};
      if (!in.gallery.empty() && rng.uniform() < 0.05) {
        e.vec = in.gallery[rng.below(in.gallery.size())].vec;
      }
      in.gallery.push_back(std::move(e));
    }
  }
  if (rng.uniform() < 0.5) in.gallery[rng.below(in.gallery.size())].vec.assign(dim, 0.0);
  for (std::size_t i = 0; i < mated; ++i) {
    const std::size_t c = rng.below(gallery_classes);
    auto v = near(c, spread);
    if (rng.uniform() < 0.05) v = in.gallery[rng.below(in.gallery.size())].vec;
    if (zero_norm(v)) v = centers[c];
    in.mated.push_back({v, static_cast<std::uint32_t>(c), ids[next++]});
  }
  for (std::size_t i = 0; i < nonmated; ++i) {
    const std::size_t c = gallery_classes + rng.below(nonmated_classes);
    in.nonmated.push_back({near(c, spread), static_cast<std::uint32_t>(c), ids[next++]});
  }
  return in;
}

}  // namespace cmce::oracle
