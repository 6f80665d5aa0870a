#include <benchmark/benchmark.h>

#include "detailfusion/common/rng.hpp"
#include "detailfusion/compositor/compositor.hpp"
#include "detailfusion/encoders/encoders.hpp"

using namespace dfusion;

namespace {

std::vector<Image> images(int n, int size) {
  Rng rng(3);
  std::vector<Image> out(static_cast<std::size_t>(n));
  for (auto& img : out) {
    img.height = img.width = size;
    img.pixels.resize(static_cast<std::size_t>(size) * size * Image::kChannels);
    for (float& p : img.pixels) p = static_cast<float>(rng.uniform());
  }
  return out;
}

}  // namespace

static void BM_EncodeQueries(benchmark::State& state) {
  const ModelConfig cfg;
  const DualEncoder<float> enc(cfg, 1);
  const int B = static_cast<int>(state.range(0));
  const auto imgs = images(B, cfg.image_size);
  std::vector<const Image*> ptrs;
  for (const auto& i : imgs) ptrs.push_back(&i);
  const std::vector<std::vector<int>> texts(static_cast<std::size_t>(B), {4, 9, 17, 22, 30, 5, 11});
  for (auto _ : state) {
    const Mat<float> v = enc.vision_encode(ptrs);
    benchmark::DoNotOptimize(enc.encode_queries(Branch::kDI, v, texts).data());
  }
  state.SetItemsProcessed(state.iterations() * B);
}
BENCHMARK(BM_EncodeQueries)->Arg(1)->Arg(32);

static void BM_EncodeQueriesBackward(benchmark::State& state) {
  const ModelConfig cfg;
  DualEncoder<float> enc(cfg, 1);
  const int B = 32;
  const auto imgs = images(B, cfg.image_size);
  std::vector<const Image*> ptrs;
  for (const auto& i : imgs) ptrs.push_back(&i);
  const std::vector<std::vector<int>> texts(static_cast<std::size_t>(B), {4, 9, 17, 22, 30, 5, 11});
  const Mat<float> v = enc.vision_encode(ptrs);
  for (auto _ : state) {
    EncodeTape<float> tape;
    const Mat<float> t = enc.encode_queries(Branch::kDI, v, texts, &tape);
    benchmark::DoNotOptimize(enc.backward(tape, Mat<float>::Ones(t.rows(), t.cols())).data());
  }
  state.SetItemsProcessed(state.iterations() * B);
}
BENCHMARK(BM_EncodeQueriesBackward);

static void BM_Compose(benchmark::State& state) {
  const ModelConfig cfg;
  const Compositor<float> comp(cfg, 2);
  const int B = static_cast<int>(state.range(0));
  Rng rng(4);
  Mat<float> g(B * cfg.num_tokens(), cfg.feature_dim), f(B * cfg.num_tokens(), cfg.feature_dim);
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    g.data()[i] = static_cast<float>(rng.normal());
    f.data()[i] = static_cast<float>(rng.normal());
  }
  for (auto _ : state) benchmark::DoNotOptimize(comp.forward(g, f, B).fused.data());
  state.SetItemsProcessed(state.iterations() * B);
}
BENCHMARK(BM_Compose)->Arg(1)->Arg(128);
