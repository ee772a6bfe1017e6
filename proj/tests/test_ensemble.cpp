#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include <gtest/gtest.h>

#include "cmce/ensemble.hpp"
#include "cmce/error.hpp"
#include "cmce/random.hpp"

namespace cmce {
namespace {

TransformedStack stack_of(std::vector<EmbeddingVector> v) {
  TransformedStack s;
  s.item_id = 1;
  s.class_label = 2;
  for (std::size_t i = 0; i < v.size(); ++i) s.model_ids.push_back("m" + std::to_string(i));
  s.per_model = std::move(v);
  return s;
}

EmbeddingVector random_vec(Rng& rng, std::size_t dim) {
  std::vector<double> v(dim);
  for (auto& x : v) x = rng.normal();
  return EmbeddingVector(v);
}

TEST(FuseMean, Examples) {
  const EmbeddingVector v{0.3, -1.2, 2.0};
  const auto same = fuse_mean(stack_of({v, v, v}));
  EXPECT_EQ(same.fused, v);
  EXPECT_EQ(same.variance.value(), 0.0);
  EXPECT_EQ(same.contributing_models, (std::vector<std::string>{"m0", "m1", "m2"}));

  const auto pair = fuse_mean(stack_of({{1, 0}, {0, 1}}));
  EXPECT_EQ(pair.fused, EmbeddingVector({0.5, 0.5}));
  EXPECT_DOUBLE_EQ(pair.variance.value(), 1.0);
  EXPECT_FALSE(pair.degenerate);

  const auto cancel = fuse_mean(stack_of({{1, 0}, {-1, 0}}));
  EXPECT_EQ(cancel.fused, EmbeddingVector({0, 0}));
  EXPECT_TRUE(cancel.degenerate);
  EXPECT_DOUBLE_EQ(cancel.variance.value(), 2.0);
  EXPECT_THROW(cancel.normalized(), DegenerateVector);

  const auto single = fuse_mean(stack_of({{1, 2}}));
  EXPECT_FALSE(single.variance.has_value());

  EXPECT_NO_THROW(fuse_mean(stack_of({{0, 0}, {1, 0}})));
  EXPECT_EQ(fuse_mean(stack_of({{0, 0}, {1, 0}})).variance.value(), 2.0);
}

TEST(Variance, Examples) {
  EXPECT_EQ(variance(stack_of({{1, 2}, {1, 2}})), 0.0);
  EXPECT_DOUBLE_EQ(variance(stack_of({{1, 0}, {0, 1}})), 1.0);
  // Pairwise cosine distances 1, 2, 1 over three pairs.
  EXPECT_DOUBLE_EQ(variance(stack_of({{1, 0}, {0, 1}, {-1, 0}})), 4.0 / 3.0);
  EXPECT_THROW(variance(stack_of({{1, 0}})), InsufficientModels);
  EXPECT_THROW(variance(stack_of({{1, 0}, {0, 0}})), DegenerateVector);
  EXPECT_THROW(variance(stack_of({{1, 0}, {0, 1, 0}})), DimensionMismatch);
}

TEST(Variance, PermutationAndScaleInvariance) {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<EmbeddingVector> v;
    const std::size_t n = 2 + rng.below(5);
    for (std::size_t i = 0; i < n; ++i) v.push_back(random_vec(rng, 8));
    const auto base = fuse_mean(stack_of(v));

    std::vector<EmbeddingVector> perm = v;
    shuffle(perm, rng);
    const auto p = fuse_mean(stack_of(perm));
    EXPECT_NEAR(*p.variance, *base.variance, 1e-12);
    for (std::size_t k = 0; k < 8; ++k) EXPECT_NEAR(p.fused[k], base.fused[k], 1e-12);

    std::vector<EmbeddingVector> scaled;
    for (const auto& e : v) {
      const double s = std::exp(rng.uniform(-3, 3));
      std::vector<double> x(e.raw());
      for (auto& c : x) c *= s;
      scaled.emplace_back(x);
    }
    EXPECT_NEAR(variance(stack_of(scaled)), *base.variance, 1e-12);
  }
}

// Oracle: mean of pairwise 1 - <a,b>/(|a||b|) over all ordered pairs i != j.
TEST(Variance, MatchesOrderedPairOracle) {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + rng.below(6);
    std::vector<EmbeddingVector> v;
    for (std::size_t i = 0; i < n; ++i) v.push_back(random_vec(rng, 5));
    double sum = 0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        double d = 0, a = 0, b = 0;
        for (std::size_t k = 0; k < 5; ++k) {
          d += v[i][k] * v[j][k];
          a += v[i][k] * v[i][k];
          b += v[j][k] * v[j][k];
        }
        sum += 1 - d / std::sqrt(a * b);
      }
    }
    EXPECT_NEAR(variance(stack_of(v)), sum / static_cast<double>(n * (n - 1)), 1e-12);
  }
}

TEST(Normalization, RawAndUnitMeansRankAlike) {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const auto q = random_vec(rng, 6);
    const auto a = fuse_mean(stack_of({random_vec(rng, 6), random_vec(rng, 6)}));
    const auto b = fuse_mean(stack_of({random_vec(rng, 6), random_vec(rng, 6)}));
    const bool raw = cosine_similarity(q, a.fused) >= cosine_similarity(q, b.fused);
    const bool unit = cosine_similarity(q, a.normalized()) >= cosine_similarity(q, b.normalized());
    const double gap = std::abs(cosine_similarity(q, a.fused) - cosine_similarity(q, b.fused));
    if (gap > 1e-12) EXPECT_EQ(raw, unit);
  }
}

std::vector<FusedGalleryItem> items_with_variance(const std::vector<double>& u) {
  std::vector<FusedGalleryItem> items;
  for (std::size_t i = 0; i < u.size(); ++i) {
    FusedGalleryItem it;
    it.item_id = static_cast<std::uint32_t>(i);
    it.class_label = static_cast<std::uint32_t>(i % 3);
    it.fused = EmbeddingVector({1.0, static_cast<double>(i)});
    it.variance = u[i];
    items.push_back(it);
  }
  return items;
}

std::vector<std::uint32_t> ids(const std::vector<FusedGalleryItem>& v) {
  std::vector<std::uint32_t> out;
  for (const auto& it : v) out.push_back(it.item_id);
  return out;
}

TEST(Rejection, Examples) {
  std::vector<double> u;
  for (int i = 0; i < 10; ++i) u.push_back(i / 10.0);
  const auto items = items_with_variance(u);

  const auto all = apply_rejection(items, {RejectionMode::kCoverageQuantile, 1.0, 0});
  EXPECT_EQ(ids(all.retained), ids(items));
  EXPECT_TRUE(all.rejected.empty());

  const auto none = apply_rejection(items_with_variance({0.1, 0.2}), {RejectionMode::kVarianceThreshold, 0.0, 0});
  EXPECT_TRUE(none.retained.empty());

  const auto r = apply_rejection(items, {RejectionMode::kCoverageQuantile, 0.7, 0});
  EXPECT_EQ(ids(r.retained), (std::vector<std::uint32_t>{0, 1, 2, 3, 4, 5, 6}));
  EXPECT_EQ(ids(r.rejected), (std::vector<std::uint32_t>{7, 8, 9}));

  EXPECT_THROW(apply_rejection(items, {RejectionMode::kCoverageQuantile, 0.0, 0}), InvalidConfig);
  EXPECT_THROW(apply_rejection(items, {RejectionMode::kCoverageQuantile, 1.5, 0}), InvalidConfig);
  EXPECT_THROW(apply_rejection(items, {RejectionMode::kVarianceThreshold, -1.0, 0}), InvalidConfig);
  auto missing = items;
  missing[3].variance.reset();
  EXPECT_THROW(apply_rejection(missing, {RejectionMode::kCoverageQuantile, 0.5, 0}), InsufficientModels);
  EXPECT_NO_THROW(apply_rejection(missing, {RejectionMode::kRandom, 0.5, 1}));
}

TEST(Rejection, CoverageCountGuardsRounding) {
  EXPECT_EQ(coverage_count(0.7, 10), 7u);
  EXPECT_EQ(coverage_count(0.9, 100), 90u);
  EXPECT_EQ(coverage_count(1.0, 3), 3u);
  EXPECT_EQ(coverage_count(0.01, 50), 0u);
}

TEST(Rejection, QuantileProperties) {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t g = 1 + rng.below(60);
    std::vector<double> u;
    // Coarse values force ties, which break by ascending item id.
    for (std::size_t i = 0; i < g; ++i) u.push_back(static_cast<double>(rng.below(5)) / 4.0);
    auto items = items_with_variance(u);
    shuffle(items, rng);
    const double c = rng.uniform(0.05, 1.0);
    const auto r = apply_rejection(items, {RejectionMode::kCoverageQuantile, c, 0});
    EXPECT_EQ(r.retained.size(), static_cast<std::size_t>(std::floor(c * g + 1e-9)));
    EXPECT_EQ(r.retained.size() + r.rejected.size(), g);
    for (const auto& a : r.retained) {
      for (const auto& b : r.rejected) {
        EXPECT_LE(*a.variance, *b.variance);
        if (*a.variance == *b.variance) EXPECT_LT(a.item_id, b.item_id);
      }
    }
    std::set<std::uint32_t> seen;
    for (const auto* part : {&r.retained, &r.rejected}) {
      for (const auto& it : *part) EXPECT_TRUE(seen.insert(it.item_id).second);
    }
    // Input order is preserved within each output.
    auto pos = [&](std::uint32_t id) {
      return std::find_if(items.begin(), items.end(), [&](const auto& x) { return x.item_id == id; }) -
             items.begin();
    };
    for (std::size_t i = 1; i < r.retained.size(); ++i) {
      EXPECT_LT(pos(r.retained[i - 1].item_id), pos(r.retained[i].item_id));
    }
  }
}

TEST(Rejection, RandomIsSeededAndSized) {
  std::vector<double> u(40, 0.5);
  const auto items = items_with_variance(u);
  const auto a = apply_rejection(items, {RejectionMode::kRandom, 0.6, 9});
  const auto b = apply_rejection(items, {RejectionMode::kRandom, 0.6, 9});
  const auto c = apply_rejection(items, {RejectionMode::kRandom, 0.6, 10});
  EXPECT_EQ(ids(a.retained), ids(b.retained));
  EXPECT_NE(ids(a.retained), ids(c.retained));
  EXPECT_EQ(a.retained.size(), 24u);
}

TEST(FuseGallery, AlignsByItemIdAndRoundTrips) {
  EmbeddingSet a("t0", 2), b("t1", 2);
  a.add({1, 0}, 5, 10);
  a.add({0, 1}, 6, 11);
  b.add({0, 1}, 6, 11);
  b.add({1, 0}, 5, 10);
  const auto items = fuse_gallery({a, b});
  ASSERT_EQ(items.size(), 2u);
  EXPECT_EQ(items[0].item_id, 10u);
  EXPECT_EQ(items[0].variance.value(), 0.0);

  EmbeddingSet c("t2", 2);
  c.add({-1, 0}, 5, 10);
  c.add({0.5f, 0.25f}, 6, 11);
  const auto fused = fuse_gallery({a, c});
  EXPECT_TRUE(fused[0].degenerate);

  const auto dir = std::filesystem::temp_directory_path() / "cmce_test_fused";
  std::filesystem::create_directories(dir);
  const auto bin = (dir / "g.cmce").string(), side = (dir / "g.json").string();
  write_fused_gallery(fused, "query", bin, side);
  const auto back = read_fused_gallery(bin, side);
  ASSERT_EQ(back.size(), fused.size());
  for (std::size_t i = 0; i < fused.size(); ++i) {
    EXPECT_EQ(back[i].item_id, fused[i].item_id);
    EXPECT_EQ(back[i].fused, fused[i].fused);
    EXPECT_EQ(back[i].variance, fused[i].variance);
    EXPECT_EQ(back[i].degenerate, fused[i].degenerate);
    EXPECT_EQ(back[i].contributing_models, fused[i].contributing_models);
  }

  EmbeddingSet d("t3", 3);
  d.add({1, 0, 0}, 5, 10);
  d.add({1, 0, 0}, 6, 11);
  EXPECT_THROW(fuse_gallery({a, d}), DimensionMismatch);
  EmbeddingSet e("t4", 2);
  e.add({1, 0}, 5, 10);
  EXPECT_THROW(fuse_gallery({a, e}), InvalidConfig);
  EXPECT_THROW(fuse_gallery({}), InsufficientModels);
}

}  // namespace
}  // namespace cmce
