#include <bit>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "cmce/embedding.hpp"
#include "cmce/embedding_io.hpp"
#include "cmce/error.hpp"
#include "cmce/random.hpp"

namespace cmce {
namespace {

namespace fs = std::filesystem;

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cmce_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

TEST(Normalize, Examples) {
  const auto a = l2_normalize({3.0, 4.0});
  EXPECT_DOUBLE_EQ(a[0], 0.6);
  EXPECT_DOUBLE_EQ(a[1], 0.8);
  const auto b = l2_normalize({0.0, 5.0});
  EXPECT_EQ(b, EmbeddingVector({0.0, 1.0}));
  EXPECT_THROW(l2_normalize({0.0, 0.0}), DegenerateVector);
}

TEST(Normalize, UnitNormOnRandomVectors) {
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    std::vector<double> v(17);
    for (auto& x : v) x = rng.normal() * std::pow(10.0, rng.uniform(-5, 5));
    EXPECT_NEAR(l2_normalize(EmbeddingVector(v)).norm(), 1.0, 1e-12);
  }
}

TEST(Distance, CosineExamples) {
  EXPECT_DOUBLE_EQ(distance(DistanceMetric::kCosine, {1, 0}, {0, 1}), 1.0);
  EXPECT_DOUBLE_EQ(distance(DistanceMetric::kCosine, {1, 0}, {1, 0}), 0.0);
  EXPECT_DOUBLE_EQ(distance(DistanceMetric::kCosine, {1, 0}, {-1, 0}), 2.0);
  EXPECT_THROW(distance(DistanceMetric::kCosine, {0, 0}, {1, 0}), DegenerateVector);
  EXPECT_THROW(distance(DistanceMetric::kCosine, {1, 0}, {1, 0, 0}), DimensionMismatch);
  EXPECT_THROW(distance(DistanceMetric::kEuclidean, {1, 0}, {1, 0, 0}), DimensionMismatch);
  EXPECT_DOUBLE_EQ(distance(DistanceMetric::kEuclidean, {0, 0}, {3, 4}), 5.0);
}

TEST(Distance, CosineIgnoresNormalization) {
  Rng rng(11);
  for (int i = 0; i < 500; ++i) {
    std::vector<double> a(8), b(8);
    for (auto& x : a) x = rng.normal() * 3.0;
    for (auto& x : b) x = rng.normal() * 0.01;
    const EmbeddingVector va(a), vb(b);
    const double d = distance(DistanceMetric::kCosine, va, vb);
    EXPECT_NEAR(d, distance(DistanceMetric::kCosine, l2_normalize(va), l2_normalize(vb)), 1e-10);
    EXPECT_GE(d, 0.0);
    EXPECT_LE(d, 2.0);
  }
}

TEST(Distance, EuclideanTriangleInequality) {
  Rng rng(12);
  for (int i = 0; i < 500; ++i) {
    std::vector<double> a(6), b(6), c(6);
    for (auto* v : {&a, &b, &c}) {
      for (auto& x : *v) x = rng.normal();
    }
    const EmbeddingVector va(a), vb(b), vc(c);
    const auto d = [](const EmbeddingVector& x, const EmbeddingVector& y) {
      return distance(DistanceMetric::kEuclidean, x, y);
    };
    EXPECT_LE(d(va, vc), d(va, vb) + d(vb, vc) + 1e-9);
  }
}

TEST(Template, Examples) {
  EXPECT_EQ(aggregate_template({0, {{1, 0}, {1, 0}}}), EmbeddingVector({1, 0}));
  const auto m = aggregate_template({0, {{1, 0}, {0, 1}}});
  EXPECT_NEAR(m[0], std::sqrt(2.0) / 2, 1e-15);
  EXPECT_NEAR(m[1], std::sqrt(2.0) / 2, 1e-15);
  EXPECT_THROW(aggregate_template({0, {{1, 0}, {-1, 0}}}), DegenerateVector);
  EXPECT_THROW(aggregate_template({0, {}}), InvalidConfig);
  EXPECT_THROW(aggregate_template({0, {{1, 0}, {1, 0, 0}}}), DimensionMismatch);
}

TEST(Template, SingleMemberIsNormalizedMember) {
  Rng rng(5);
  for (int i = 0; i < 50; ++i) {
    std::vector<double> v(9);
    for (auto& x : v) x = rng.normal();
    const EmbeddingVector e(v);
    EXPECT_EQ(aggregate_template({1, {e}}), l2_normalize(e));
  }
}

TEST(Embedding, Invariants) {
  EXPECT_THROW(EmbeddingVector({1.0}), DimensionMismatch);
  EXPECT_THROW(EmbeddingVector({1.0, std::nan("")}), InvalidConfig);
  EXPECT_THROW(EmbeddingVector({1.0, INFINITY}), InvalidConfig);
  EmbeddingSet s("m", 2);
  s.add({1, 0}, 0, 7);
  EXPECT_THROW(s.add({1, 0}, 1, 7), InvalidConfig);
  EXPECT_THROW(s.add({1, 0, 0}, 1, 8), DimensionMismatch);
  EXPECT_EQ(s.find(7), 0u);
  EXPECT_EQ(s.find(9), s.size());
}

EmbeddingSet random_set(std::uint64_t seed, std::size_t n, std::size_t dim) {
  Rng rng(seed);
  EmbeddingSet s("model-\xc3\xa9" + std::to_string(seed), dim);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> v(dim);
    for (auto& x : v) x = rng.normal();
    s.add(EmbeddingVector(v), static_cast<std::uint32_t>(rng.below(1000)),
          static_cast<std::uint32_t>(i * 977 + rng.below(977)));
  }
  return quantize_f32(s);
}

TEST(EmbeddingIo, RoundTripIsBitExact) {
  const fs::path dir = temp_dir("io");
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const EmbeddingSet s = random_set(seed, 40, 2 + seed);
    const std::string path = (dir / "s.cmce").string();
    write_embedding_set(s, path);
    const EmbeddingSet r = read_embedding_set(path);
    ASSERT_EQ(r, s);
    for (std::size_t i = 0; i < s.size(); ++i) {
      for (std::size_t k = 0; k < s.dim(); ++k) {
        EXPECT_EQ(std::bit_cast<std::uint64_t>(r[i].vector[k]),
                  std::bit_cast<std::uint64_t>(s[i].vector[k]));
      }
    }
  }
}

TEST(EmbeddingIo, LayoutMatchesDocumentedHeader) {
  EmbeddingSet s("ab", 2);
  s.add({1.0f, -2.0f}, 5, 9);
  const std::string b = encode_embedding_set(s);
  ASSERT_EQ(b.size(), 4u + 4 + 4 + 4 + 2 + 2 + 4 + 4 + 8);
  EXPECT_EQ(b.substr(0, 4), "CMCE");
  auto u32 = [&](std::size_t off) {
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(b[off + i]);
    return v;
  };
  EXPECT_EQ(u32(4), 1u);   // version
  EXPECT_EQ(u32(8), 1u);   // count
  EXPECT_EQ(u32(12), 2u);  // dim
  EXPECT_EQ(static_cast<unsigned char>(b[16]), 2);
  EXPECT_EQ(b.substr(18, 2), "ab");
  EXPECT_EQ(u32(20), 9u);
  EXPECT_EQ(u32(24), 5u);
  EXPECT_EQ(u32(28), std::bit_cast<std::uint32_t>(1.0f));
  EXPECT_EQ(u32(32), std::bit_cast<std::uint32_t>(-2.0f));
}

TEST(EmbeddingIo, CorruptFiles) {
  const std::string good = encode_embedding_set(random_set(4, 5, 4));
  std::string bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_embedding_set(bad_magic), FormatError);
  std::string bad_version = good;
  bad_version[4] = 2;
  EXPECT_THROW(decode_embedding_set(bad_version), FormatError);
  EXPECT_THROW(decode_embedding_set(good.substr(0, good.size() - 3)), FormatError);
  EXPECT_THROW(decode_embedding_set(good.substr(0, 10)), FormatError);
  EXPECT_THROW(decode_embedding_set(good + "xxxx"), DimensionMismatch);
  EXPECT_THROW(read_embedding_set("/nonexistent/dir/file.cmce"), IoError);
}

TEST(EmbeddingIo, ClassManifestRoundTrip) {
  const fs::path dir = temp_dir("manifest");
  const ClassNames names{{0, "alpha"}, {7, "beta"}, {65535, "gamma"}};
  write_class_manifest(names, (dir / "c.json").string());
  EXPECT_EQ(read_class_manifest((dir / "c.json").string()), names);
  std::ofstream((dir / "bad.json").string()) << "{\"x\": \"y\"}";
  EXPECT_THROW(read_class_manifest((dir / "bad.json").string()), FormatError);
}

TEST(Random, DeriveSeedIsStableAndIndependent) {
  EXPECT_EQ(derive_seed(0, "a"), splitmix64(0 ^ hash_name("a")));
  EXPECT_NE(derive_seed(0, "a"), derive_seed(0, "b"));
  EXPECT_NE(derive_seed(0, "a"), derive_seed(1, "a"));
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.normal(), b.normal());
}

TEST(Random, NormalMoments) {
  Rng rng(9);
  double s = 0, s2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    s += x;
    s2 += x * x;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.01);
}

TEST(Random, BelowIsUniform) {
  Rng rng(10);
  std::vector<int> counts(7, 0);
  for (int i = 0; i < 70000; ++i) ++counts[rng.below(7)];
  for (int c : counts) EXPECT_NEAR(c, 10000, 400);
}

}  // namespace
}  // namespace cmce
