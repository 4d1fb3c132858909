#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "sevilab/decode.hpp"

using namespace sevilab;
using decode::ContrastConfig;
using decode::GenerationConfig;
using decode::Strategy;

namespace {

std::vector<double> random_probs(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> p(n);
  double sum = 0.0;
  for (auto& v : p) sum += (v = u(rng) + 1e-9);
  for (auto& v : p) v /= sum;
  return p;
}

GenerationConfig greedy_config(int tokens) {
  GenerationConfig cfg;
  cfg.strategy = Strategy::Greedy;
  cfg.max_new_tokens = tokens;
  return cfg;
}

}  // namespace

TEST_CASE("jsd identities") {
  const std::vector<double> p = {0.25, 0.25, 0.5};
  CHECK(decode::jsd(p, p) == 0.0);

  const std::vector<double> a = {1.0, 0.0};
  const std::vector<double> b = {0.0, 1.0};
  CHECK(decode::jsd(a, b) == doctest::Approx(1.0).epsilon(1e-12));

  CHECK_THROWS_AS(decode::jsd(a, p), InputError);
}

TEST_CASE("jsd matches the literal formula evaluation") {
  const std::vector<double> p = {0.5, 0.5};
  const std::vector<double> q = {1.0, 0.0};
  // Independent scalar evaluation of 0.5 KL(p||m) + 0.5 KL(q||m), base 2.
  const double m0 = 0.75, m1 = 0.25;
  const double kl_p = 0.5 * std::log2(0.5 / m0) + 0.5 * std::log2(0.5 / m1);
  const double kl_q = 1.0 * std::log2(1.0 / m0);
  const double expected = 0.5 * kl_p + 0.5 * kl_q;
  CHECK(decode::jsd(p, q) == doctest::Approx(expected).epsilon(1e-15));
  CHECK(decode::jsd(p, q) == doctest::Approx(0.3112781244591328).epsilon(1e-12));
}

TEST_CASE("jsd is symmetric, nonnegative, and bounded (fuzz)") {
  std::mt19937_64 rng(11);
  for (int iter = 0; iter < 200; ++iter) {
    const int n = 2 + static_cast<int>(rng() % 30);
    const auto p = random_probs(rng, n);
    const auto q = random_probs(rng, n);
    const double d1 = decode::jsd(p, q);
    const double d2 = decode::jsd(q, p);
    CHECK(d1 == doctest::Approx(d2).epsilon(1e-12));
    CHECK(d1 >= 0.0);
    CHECK(d1 <= 1.0 + 1e-12);
  }
}

TEST_CASE("adaptive alpha arithmetic") {
  ContrastConfig cfg;  // floor 1e-12, cap 10
  CHECK(decode::adaptive_alpha(0.1, cfg) == 2.0);
  CHECK(decode::adaptive_alpha(1.0, cfg) == 1.0);
  CHECK(decode::adaptive_alpha(0.0, cfg) == 10.0);  // 1 - log10(1e-12) = 13, capped

  ContrastConfig wide = cfg;
  wide.alpha_cap = 20.0;
  CHECK(decode::adaptive_alpha(0.0, wide) == doctest::Approx(13.0).epsilon(1e-12));
}

TEST_CASE("alpha is non-increasing in jsd (fuzz)") {
  ContrastConfig cfg;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(1e-12, 1.0);
  for (int iter = 0; iter < 200; ++iter) {
    double x = u(rng), y = u(rng);
    if (x > y) std::swap(x, y);
    CHECK(decode::adaptive_alpha(x, cfg) >= decode::adaptive_alpha(y, cfg));
  }
}

TEST_CASE("contrastive combine identities and hand value") {
  const std::vector<double> pos = {1.0, 2.0};
  const std::vector<double> neg = {0.0, 1.0};

  CHECK(decode::contrastive_combine(pos, neg, 0.0) == pos);
  CHECK(decode::contrastive_combine(pos, pos, 2.7) == pos);

  const auto out = decode::contrastive_combine(pos, neg, 2.0);
  CHECK(out == std::vector<double>{3.0, 4.0});

  const std::vector<double> shorter = {0.0};
  CHECK_THROWS_AS(decode::contrastive_combine(pos, shorter, 1.0), InputError);
}

TEST_CASE("cancellation is exact for random inputs") {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> g(0.0, 5.0);
  std::uniform_real_distribution<double> a(0.0, 10.0);
  for (int iter = 0; iter < 100; ++iter) {
    std::vector<double> pos(16);
    for (auto& v : pos) v = g(rng);
    CHECK(decode::contrastive_combine(pos, pos, a(rng)) == pos);
    CHECK(decode::contrastive_combine(pos, pos, 0.0) == pos);
  }
}

TEST_CASE("greedy sampling takes the lowest-index argmax") {
  GenerationConfig cfg = greedy_config(1);
  Rng rng(0);
  std::vector<double> logits = {0.0, 1.0, 2.0, 5.0, 2.0, 1.0, 0.0, 5.0};
  CHECK(decode::sample_token(logits, cfg, rng) == 3);  // tie between 3 and 7

  std::vector<double> onehot(8, -std::numeric_limits<double>::infinity());
  onehot[5] = 0.0;
  CHECK(decode::sample_token(onehot, cfg, rng) == 5);
  GenerationConfig sampler;
  sampler.strategy = Strategy::Sample;
  CHECK(decode::sample_token(onehot, sampler, rng) == 5);
}

TEST_CASE("nucleus truncation keeps the smallest covering prefix") {
  GenerationConfig cfg;
  cfg.strategy = Strategy::Sample;
  cfg.top_p = 0.5;
  // softmax of these logits is exactly (0.6, 0.3, 0.1) scaled logs.
  std::vector<double> logits = {std::log(0.6), std::log(0.3), std::log(0.1)};
  for (int seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    CHECK(decode::sample_token(logits, cfg, rng) == 0);
  }
}

TEST_CASE("sampling validates logits") {
  GenerationConfig cfg;
  Rng rng(1);
  std::vector<double> all_masked(4, -std::numeric_limits<double>::infinity());
  CHECK_THROWS_AS(decode::sample_token(all_masked, cfg, rng), NumericError);
  std::vector<double> with_nan = {0.0, std::nan("")};
  CHECK_THROWS_AS(decode::sample_token(with_nan, cfg, rng), NumericError);
}

TEST_CASE("sampling is deterministic per seed") {
  GenerationConfig cfg;
  cfg.strategy = Strategy::Sample;
  cfg.temperature = 0.8;
  cfg.top_p = 0.9;
  std::mt19937_64 gen(5);
  std::normal_distribution<double> g(0.0, 2.0);
  std::vector<double> logits(64);
  for (auto& v : logits) v = g(gen);

  Rng a(99), b(99);
  for (int i = 0; i < 20; ++i) {
    CHECK(decode::sample_token(logits, cfg, a) == decode::sample_token(logits, cfg, b));
  }
}

TEST_CASE("config validation") {
  GenerationConfig cfg;
  cfg.temperature = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = GenerationConfig{};
  cfg.top_p = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = GenerationConfig{};
  cfg.max_new_tokens = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  ContrastConfig ccfg;
  ccfg.jsd_floor = 0.0;
  CHECK_THROWS_AS(ccfg.validate(), ConfigError);
  ccfg = ContrastConfig{};
  ccfg.alpha_cap = 0.5;
  CHECK_THROWS_AS(ccfg.validate(), ConfigError);
}

TEST_CASE("config json roundtrips") {
  GenerationConfig gen;
  gen.max_new_tokens = 9;
  gen.strategy = Strategy::Greedy;
  gen.temperature = 0.7;
  gen.top_p = 0.95;
  gen.rng_seed = 123;
  const GenerationConfig gback = GenerationConfig::from_json(gen.to_json());
  CHECK(gback.max_new_tokens == 9);
  CHECK(gback.strategy == Strategy::Greedy);
  CHECK(gback.temperature == 0.7);
  CHECK(gback.top_p == 0.95);
  CHECK(gback.rng_seed == 123);

  ContrastConfig c;
  c.enabled = true;
  c.negative_image_seed = 77;
  c.alpha_cap = 5.0;
  c.align_negative = true;
  const ContrastConfig cback = ContrastConfig::from_json(c.to_json());
  CHECK(cback.enabled);
  CHECK(cback.negative_image_seed == 77);
  CHECK(cback.alpha_cap == 5.0);
  CHECK(cback.align_negative);
}

TEST_CASE("neutral generation is bit-identical to the bare decoding loop") {
  const ModelParams params = init_model(ModelConfig{});
  const SyntheticImage img = SyntheticImage::random(6, params.config.model_dim, 41);
  const std::vector<int> prompt = {5, 9, 14};

  align::AlignConfig align_cfg;  // omega 0
  align_cfg.start_layer = params.config.num_layers + 1;
  ContrastConfig contrast;  // disabled
  const GenerationConfig gen_cfg = greedy_config(10);

  const decode::GenerationResult via_generate =
      decode::generate(params, img, prompt, align_cfg, contrast, gen_cfg);

  // Bare loop: prefill all but the last prompt token, then argmax steps.
  const auto embeds = encode_image(img, params);
  std::vector<Session::Input> ctx;
  for (const auto& e : embeds) ctx.push_back(Session::Input::embedding(e));
  for (std::size_t i = 0; i + 1 < prompt.size(); ++i) ctx.push_back(Session::Input::token(prompt[i]));
  Session session(params, img.patches - 1, img.patches + 2);
  session.prefill(ctx);

  std::vector<int> bare;
  Session::Input current = Session::Input::token(prompt.back());
  for (int t = 0; t < 10; ++t) {
    const StepResult r = session.step(current);
    int best = 0;
    for (std::size_t i = 1; i < r.logits.size(); ++i) {
      if (r.logits[i] > r.logits[best]) best = static_cast<int>(i);
    }
    bare.push_back(best);
    current = Session::Input::token(best);
  }
  CHECK(via_generate.tokens == bare);
}

TEST_CASE("generation is reproducible and omega-0 alignment changes nothing") {
  const ModelParams params = init_model(ModelConfig{});
  const SyntheticImage img = SyntheticImage::random(6, params.config.model_dim, 43);
  const std::vector<int> prompt = {5, 9};

  align::AlignConfig neutral;  // omega 0, start layer 1: hook fires, blends nothing
  ContrastConfig contrast;
  GenerationConfig gen_cfg;
  gen_cfg.max_new_tokens = 12;
  gen_cfg.rng_seed = 77;

  const auto a = decode::generate(params, img, prompt, neutral, contrast, gen_cfg);
  const auto b = decode::generate(params, img, prompt, neutral, contrast, gen_cfg);
  CHECK(a.tokens == b.tokens);

  align::AlignConfig off = neutral;
  off.start_layer = params.config.num_layers + 1;
  const auto c = decode::generate(params, img, prompt, off, contrast, gen_cfg);
  CHECK(a.tokens == c.tokens);
}

TEST_CASE("contrast with an identical negative image cancels exactly") {
  const ModelParams params = init_model(ModelConfig{});
  const SyntheticImage img = SyntheticImage::random(6, params.config.model_dim, 47);
  const std::vector<int> prompt = {3, 4};

  align::AlignConfig align_off;
  align_off.start_layer = params.config.num_layers + 1;

  ContrastConfig same_image;
  same_image.enabled = true;
  same_image.negative_image_seed = img.seed;  // negative == positive

  ContrastConfig disabled;

  const GenerationConfig gen_cfg = greedy_config(8);
  const auto with = decode::generate(params, img, prompt, align_off, same_image, gen_cfg);
  const auto without = decode::generate(params, img, prompt, align_off, disabled, gen_cfg);
  CHECK(with.tokens == without.tokens);
  for (const auto& s : with.trace) CHECK(s.jsd == 0.0);
}

TEST_CASE("focused alignment with contrast produces a well-formed trace") {
  const ModelParams params = init_model(ModelConfig{});
  const SyntheticImage img = SyntheticImage::random(8, params.config.model_dim, 53);
  const std::vector<int> prompt = {2, 45, 89, 13, 7};

  align::AlignConfig align_cfg = align::preset(align::Mode::Focused);
  align_cfg = align::clamp_to_depth(align_cfg, params.config.num_layers);
  align_cfg.start_layer = 2;  // engage on the toy depth

  ContrastConfig contrast;
  contrast.enabled = true;
  contrast.negative_image_seed = img.seed + 1;

  GenerationConfig gen_cfg;
  gen_cfg.max_new_tokens = 10;
  gen_cfg.rng_seed = 5;

  const auto result = decode::generate(params, img, prompt, align_cfg, contrast, gen_cfg);
  REQUIRE(result.tokens.size() == 10);
  REQUIRE(result.trace.size() == 10);
  for (const auto& s : result.trace) {
    CHECK(std::isfinite(s.jsd));
    CHECK(std::isfinite(s.alpha));
    CHECK(s.alpha <= contrast.alpha_cap);
    CHECK(s.jsd >= 0.0);
    CHECK(s.token == result.tokens[s.step]);
  }

  std::ostringstream jsonl;
  decode::write_trace_jsonl(jsonl, result, gen_cfg);
  int lines = 0;
  std::string line;
  std::istringstream parse(jsonl.str());
  while (std::getline(parse, line)) {
    CHECK(line.find("\"step\"") != std::string::npos);
    CHECK(line.find("\"strategy\":\"sample\"") != std::string::npos);
    ++lines;
  }
  CHECK(lines == 10);
}

TEST_CASE("generation respects the context budget") {
  ModelConfig cfg;
  cfg.max_context = 16;
  const ModelParams params = init_model(cfg);
  const SyntheticImage img = SyntheticImage::random(8, cfg.model_dim, 3);
  align::AlignConfig align_cfg;
  ContrastConfig contrast;
  GenerationConfig gen_cfg = greedy_config(12);  // 8 visual + 2 prompt + 12 > 16
  CHECK_THROWS_AS(decode::generate(params, img, {1, 2}, align_cfg, contrast, gen_cfg),
                  CapacityError);
  CHECK_THROWS_AS(decode::generate(params, img, {}, align_cfg, contrast, greedy_config(1)),
                  InputError);
}

TEST_CASE("logit distribution variants validate their invariants") {
  using decode::LogitDistribution;
  using decode::Space;

  const auto probs = LogitDistribution::probabilities({0.25, 0.75});
  CHECK(probs.space == Space::Probabilities);
  CHECK_THROWS_AS(LogitDistribution::probabilities({0.3, 0.3}), InputError);
  CHECK_THROWS_AS(LogitDistribution::probabilities({-0.5, 1.5}), InputError);

  const auto logits = LogitDistribution::logits({1.0, -2.0});
  const auto converted = logits.to_probabilities();
  double sum = 0.0;
  for (double v : converted.values) sum += v;
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS_AS(converted.to_probabilities(), InputError);

  // Typed overloads reject the wrong space.
  CHECK_THROWS_AS(decode::jsd(logits, logits), InputError);
  CHECK_THROWS_AS(decode::contrastive_combine(probs, probs, 1.0), InputError);
  const auto combined = decode::contrastive_combine(logits, logits, 3.0);
  CHECK(combined.values == logits.values);
}
