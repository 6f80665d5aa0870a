#include <benchmark/benchmark.h>

#include "detailfusion/common/rng.hpp"
#include "detailfusion/retrieval/retrieval.hpp"

using namespace dfusion;

namespace {

GalleryIndex random_index(int n, int d) {
  Rng rng(5);
  Mat<float> f(n, d);
  for (Eigen::Index i = 0; i < f.size(); ++i) f.data()[i] = static_cast<float>(rng.normal());
  for (int r = 0; r < n; ++r) f.row(r).normalize();
  std::vector<int> ids(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) ids[static_cast<std::size_t>(i)] = i;
  return make_index(std::move(ids), std::move(f));
}

}  // namespace

static void BM_RetrieveTop10(benchmark::State& state) {
  const auto index = random_index(static_cast<int>(state.range(0)), 64);
  std::vector<float> q(index.features.row(7).data(), index.features.row(7).data() + 64);
  for (auto _ : state) benchmark::DoNotOptimize(retrieve(q, index, 10).ids.data());
}
BENCHMARK(BM_RetrieveTop10)->Arg(500)->Arg(2000)->Arg(20000);

static void BM_RetrieveScoreSum(benchmark::State& state) {
  const auto index = random_index(2000, 64);
  std::vector<float> a(index.features.row(1).data(), index.features.row(1).data() + 64);
  std::vector<float> b(index.features.row(2).data(), index.features.row(2).data() + 64);
  for (auto _ : state) benchmark::DoNotOptimize(retrieve(a, index, 10, RankMode::kScoreSum, b).ids.data());
}
BENCHMARK(BM_RetrieveScoreSum);

BENCHMARK_MAIN();
