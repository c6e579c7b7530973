#include <benchmark/benchmark.h>

#include <string>
#include <vector>

#include "emforge/encoder.hpp"
#include "emforge/gradcache.hpp"
#include "emforge/model.hpp"
#include "emforge/ops.hpp"
#include "emforge/rng.hpp"

namespace {

using namespace emforge;

Tensor random_matrix(std::size_t rows, std::size_t cols, DType dtype, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = rng.normal();
  return Tensor::from_values({rows, cols}, v, dtype);
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const DType dtype = state.range(1) ? DType::f64 : DType::f32;
  const Tensor a = random_matrix(n, n, dtype, 1), b = random_matrix(n, n, dtype, 2);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->ArgsProduct({{64, 128, 256}, {0, 1}});

ModelConfig bench_config(std::size_t d, std::size_t layers) {
  ModelConfig c;
  c.hidden_dim = d;
  c.layers = layers;
  return c;
}

std::vector<TokenSequence> text_batch(const ModelConfig& c, std::size_t n, std::size_t len, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<TokenSequence> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::string text;
    for (std::size_t k = 0; k < len; ++k) text += static_cast<char>('a' + rng.below(26));
    out.push_back(build_sequence(text, std::nullopt, c));
  }
  return out;
}

void BM_EncodeBatch(benchmark::State& state) {
  const ModelConfig c = bench_config(static_cast<std::size_t>(state.range(0)), static_cast<std::size_t>(state.range(1)));
  const Model m = init_model(c, 1, DType::f32);
  const auto seqs = text_batch(c, 16, 40, 3);
  for (auto _ : state) benchmark::DoNotOptimize(encode_batch(seqs, m, true));
  state.SetItemsProcessed(state.iterations() * 16);
}
BENCHMARK(BM_EncodeBatch)->Args({32, 2})->Args({64, 4})->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  const ModelConfig c = bench_config(32, 2);
  const Model m = init_model(c, 1, DType::f32);
  const auto b = static_cast<std::size_t>(state.range(0)), s = static_cast<std::size_t>(state.range(1));
  SequenceBatch batch;
  batch.queries = text_batch(c, b, 40, 4);
  batch.targets = text_batch(c, b, 20, 5);
  const SubBatchPartition part = partition(b, s);
  const AdamWState opt;
  for (auto _ : state) benchmark::DoNotOptimize(train_step(m, batch, part, opt, 1e-3, 0.02));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(b));
}
BENCHMARK(BM_TrainStep)->Args({64, 8})->Args({64, 64})->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
