#include <benchmark/benchmark.h>

#include "cmce/ensemble.hpp"
#include "cmce/evalproto.hpp"
#include "cmce/loss.hpp"
#include "cmce/random.hpp"
#include "cmce/synthworld.hpp"
#include "cmce/transform_net.hpp"

namespace {

using namespace cmce;

EmbeddingSet random_set(std::size_t n, std::size_t dim, std::uint64_t seed, std::uint32_t label0 = 0) {
  Rng rng(seed);
  EmbeddingSet s("bench", dim);
  std::vector<double> v(dim);
  for (std::size_t i = 0; i < n; ++i) {
    for (auto& x : v) x = rng.normal();
    s.add(EmbeddingVector(v), label0 + static_cast<std::uint32_t>(i % 100), static_cast<std::uint32_t>(i));
  }
  return s;
}

Eigen::MatrixXd gaussian(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

void BM_SearchTop1(benchmark::State& state) {
  const auto gallery = random_set(static_cast<std::size_t>(state.range(0)), 64, 1);
  const auto idx = build_index(gallery);
  const auto queries = random_set(256, 64, 2);
  std::size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(search_top1(idx, queries.items()[i++ % 256].vector));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_SearchTop1)->Arg(200)->Arg(2000)->Arg(20000);

void BM_OpenSetEval(benchmark::State& state) {
  const auto idx = build_index(random_set(200, 64, 3));
  const ProbeSet probes{to_probes(random_set(600, 64, 4)), to_probes(random_set(400, 64, 5, 1000))};
  for (auto _ : state) benchmark::DoNotOptimize(open_set_search_eval(idx, probes, 0.01));
}
BENCHMARK(BM_OpenSetEval);

void BM_TarAtFar(benchmark::State& state) {
  Rng rng(6);
  std::vector<double> gen(static_cast<std::size_t>(state.range(0))), imp(gen.size() * 10);
  for (auto& s : gen) s = rng.normal() + 1.0;
  for (auto& s : imp) s = rng.normal();
  for (auto _ : state) benchmark::DoNotOptimize(tar_at_far_verification(gen, imp, 0.01));
}
BENCHMARK(BM_TarAtFar)->Arg(1000)->Arg(100000);

void BM_FuseGallery(benchmark::State& state) {
  std::vector<EmbeddingSet> sets;
  for (int k = 0; k < state.range(0); ++k) sets.push_back(random_set(200, 64, 10 + k));
  for (auto _ : state) benchmark::DoNotOptimize(fuse_gallery(sets, DistanceMetric::kCosine));
}
BENCHMARK(BM_FuseGallery)->Arg(2)->Arg(4)->Arg(8);

void BM_ForwardBatch(benchmark::State& state) {
  const auto net = init_transform(64, 64, 7, false);
  Rng rng(8);
  const Eigen::MatrixXd x = gaussian(rng, state.range(0), 64);
  for (auto _ : state) benchmark::DoNotOptimize(forward_batch(net, x));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ForwardBatch)->Arg(256)->Arg(2048);

void BM_LossAndGrad(benchmark::State& state) {
  Rng rng(9);
  Trainables p;
  p.nets.push_back(init_transform(64, 64, 1, false));
  p.head = init_head(150, 64, 16.0, 2);
  PairBatch batch;
  batch.gallery.push_back(gaussian(rng, 256, 64));
  batch.query = gaussian(rng, 256, 64);
  for (int i = 0; i < 256; ++i) batch.labels.push_back(static_cast<int>(rng.below(150)));
  const TrainConfig cfg;
  Trainables grad = p.zeros_like();
  for (auto _ : state) {
    benchmark::DoNotOptimize(loss_and_grad(p, batch, cfg, Fusion::kIndependent, &grad));
  }
}
BENCHMARK(BM_LossAndGrad);

void BM_EmbedSplit(benchmark::State& state) {
  const LatentWorld world = make_world(64, 300, 0.15, 1);
  const SynthModel model = spawn_model(world, ArchFamily::kB, 64, 0.05, 2);
  std::vector<std::uint32_t> classes(100);
  for (std::uint32_t c = 0; c < 100; ++c) classes[c] = c;
  for (auto _ : state) benchmark::DoNotOptimize(generate_split(world, model, classes, 8, 0));
}
BENCHMARK(BM_EmbedSplit);

}  // namespace

BENCHMARK_MAIN();
