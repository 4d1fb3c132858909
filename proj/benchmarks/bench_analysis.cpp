#include <benchmark/benchmark.h>

#include <random>

#include "sevilab/align.hpp"
#include "sevilab/decode.hpp"
#include "sevilab/flow.hpp"

using namespace sevilab;

namespace {

AttentionRows random_raw(int heads, int keys, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 2.0);
  AttentionRows rows(heads, keys);
  for (auto& v : rows.scores) v = g(rng);
  return rows;
}

void BM_AlignAttention(benchmark::State& state) {
  const int heads = static_cast<int>(state.range(0));
  const int keys = static_cast<int>(state.range(1));
  const AttentionRows raw = random_raw(heads, keys, 5);
  SequenceLayout layout;
  layout.visual_end = keys / 3;
  layout.prompt_end = keys / 3 + 1;
  layout.total_len = keys;
  align::AlignConfig cfg;
  cfg.omega = 2.0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(align::align_attention(raw, layout, cfg));
  }
}
BENCHMARK(BM_AlignAttention)->Args({4, 32})->Args({8, 128})->Args({32, 256});

void BM_RolloutStep(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  AttentionTensor tensor(1, 4, n, n, true);
  for (int h = 0; h < 4; ++h) {
    for (int q = 0; q < n; ++q) {
      double sum = 0.0;
      for (int k = 0; k <= q; ++k) sum += (tensor.at(h, q, k) = u(rng));
      for (int k = 0; k <= q; ++k) tensor.at(h, q, k) /= sum;
    }
  }
  const flow::FlowMatrix identity = flow::FlowMatrix::identity(n);
  for (auto _ : state) {
    benchmark::DoNotOptimize(flow::rollout_step(identity, tensor));
  }
}
BENCHMARK(BM_RolloutStep)->Arg(32)->Arg(128);

void BM_Jsd(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> p(n), q(n);
  double sp = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    sp += (p[i] = u(rng) + 1e-9);
    sq += (q[i] = u(rng) + 1e-9);
  }
  for (auto& v : p) v /= sp;
  for (auto& v : q) v /= sq;
  for (auto _ : state) {
    benchmark::DoNotOptimize(decode::jsd(p, q));
  }
}
BENCHMARK(BM_Jsd)->Arg(256)->Arg(4096);

}  // namespace
