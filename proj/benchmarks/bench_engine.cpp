#include <benchmark/benchmark.h>

#include "sevilab/decode.hpp"
#include "sevilab/model.hpp"

using namespace sevilab;

namespace {

std::vector<Session::Input> default_context(const ModelParams& params, int visual, int text) {
  const SyntheticImage img = SyntheticImage::random(visual, params.config.model_dim, 1001);
  std::vector<Session::Input> inputs;
  for (const auto& e : encode_image(img, params)) {
    inputs.push_back(Session::Input::embedding(e));
  }
  for (int t = 0; t < text; ++t) inputs.push_back(Session::Input::token(t % 7 + 1));
  return inputs;
}

void BM_Prefill(benchmark::State& state) {
  const ModelParams params = init_model(ModelConfig{});
  const auto inputs = default_context(params, 16, static_cast<int>(state.range(0)));
  for (auto _ : state) {
    Session session(params, 15, 15 + static_cast<int>(state.range(0)));
    benchmark::DoNotOptimize(session.prefill(inputs));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(inputs.size()));
}
BENCHMARK(BM_Prefill)->Arg(5)->Arg(16)->Arg(48);

void BM_DecodeStep(benchmark::State& state) {
  const ModelParams params = init_model(ModelConfig{});
  const auto inputs = default_context(params, 16, 5);
  Session session(params, 15, 20);
  session.prefill(inputs);
  int token = 1;
  for (auto _ : state) {
    if (session.length() + 1 > params.config.max_context) {
      state.PauseTiming();
      session = Session(params, 15, 20);
      session.prefill(inputs);
      state.ResumeTiming();
    }
    benchmark::DoNotOptimize(session.step(Session::Input::token(token)));
    token = token % 11 + 1;
  }
}
BENCHMARK(BM_DecodeStep);

void BM_GenerateAligned(benchmark::State& state) {
  const ModelParams params = init_model(ModelConfig{});
  const SyntheticImage img = SyntheticImage::random(16, params.config.model_dim, 1001);
  align::AlignConfig align_cfg = align::preset(align::Mode::Focused);
  align_cfg.start_layer = 2;
  decode::ContrastConfig contrast;
  contrast.enabled = true;
  contrast.negative_image_seed = 1002;
  decode::GenerationConfig gen;
  gen.max_new_tokens = static_cast<int>(state.range(0));
  gen.strategy = decode::Strategy::Greedy;
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        decode::generate(params, img, {2, 45, 89, 13, 7}, align_cfg, contrast, gen));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_GenerateAligned)->Arg(8)->Arg(24);

}  // namespace
