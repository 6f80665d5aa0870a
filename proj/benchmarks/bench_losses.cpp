#include <benchmark/benchmark.h>

#include "detailfusion/common/rng.hpp"
#include "detailfusion/losses/losses.hpp"

using namespace dfusion;

namespace {

Mat<float> unit_rows(Rng& rng, int rows, int cols) {
  Mat<float> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(rng.normal());
  for (int r = 0; r < rows; ++r) m.row(r).normalize();
  return m;
}

ContrastiveBatch<float> batch(int B, int d) {
  Rng rng(1);
  ContrastiveBatch<float> b;
  b.query = unit_rows(rng, B, d);
  b.target = unit_rows(rng, B, d);
  b.ref = unit_rows(rng, B, d);
  b.group = unit_rows(rng, B * kGroupNegatives, d);
  return b;
}

}  // namespace

static void BM_LossGm(benchmark::State& state) {
  const auto b = batch(static_cast<int>(state.range(0)), 64);
  for (auto _ : state) benchmark::DoNotOptimize(loss_gm(b).value);
}
BENCHMARK(BM_LossGm)->Arg(32)->Arg(128);

static void BM_LossDi(benchmark::State& state) {
  const auto b = batch(static_cast<int>(state.range(0)), 64);
  for (auto _ : state) benchmark::DoNotOptimize(loss_di(b).value);
}
BENCHMARK(BM_LossDi)->Arg(32)->Arg(128);

static void BM_LossDiSgn(benchmark::State& state) {
  const auto b = batch(static_cast<int>(state.range(0)), 64);
  for (auto _ : state) benchmark::DoNotOptimize(loss_di_sgn(b).value);
}
BENCHMARK(BM_LossDiSgn)->Arg(32)->Arg(128);

static void BM_LossGmSpn(benchmark::State& state) {
  const int G = static_cast<int>(state.range(0));
  Rng rng(2);
  const Mat<float> q = unit_rows(rng, 32, 64);
  const Mat<float> gallery = unit_rows(rng, G, 64);
  std::vector<std::int64_t> ids(static_cast<std::size_t>(G));
  for (int i = 0; i < G; ++i) ids[static_cast<std::size_t>(i)] = i;
  std::vector<std::int64_t> targets(32);
  for (int i = 0; i < 32; ++i) targets[static_cast<std::size_t>(i)] = i;
  for (auto _ : state) benchmark::DoNotOptimize(loss_gm_spn(q, targets, gallery, ids, 0.07).value);
}
BENCHMARK(BM_LossGmSpn)->Arg(500)->Arg(2000);
