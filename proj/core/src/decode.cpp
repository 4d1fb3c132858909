#include "sevilab/decode.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>

#include <nlohmann/json.hpp>

namespace sevilab::decode {

void GenerationConfig::validate() const {
  if (max_new_tokens < 1) throw ConfigError("max_new_tokens must be >= 1");
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw ConfigError("temperature must be a positive real");
  }
  if (!(top_p > 0.0 && top_p <= 1.0)) throw ConfigError("top_p must lie in (0, 1]");
}

std::string GenerationConfig::to_json() const {
  nlohmann::json j;
  j["max_new_tokens"] = max_new_tokens;
  j["strategy"] = strategy_name(strategy);
  j["temperature"] = temperature;
  j["top_p"] = top_p;
  j["rng_seed"] = rng_seed;
  return j.dump(2);
}

GenerationConfig GenerationConfig::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  GenerationConfig cfg;
  if (j.contains("max_new_tokens")) cfg.max_new_tokens = j.at("max_new_tokens").get<int>();
  if (j.contains("strategy")) {
    const std::string s = j.at("strategy").get<std::string>();
    if (s == "greedy") {
      cfg.strategy = Strategy::Greedy;
    } else if (s == "sample") {
      cfg.strategy = Strategy::Sample;
    } else {
      throw ConfigError("strategy must be greedy or sample");
    }
  }
  if (j.contains("temperature")) cfg.temperature = j.at("temperature").get<double>();
  if (j.contains("top_p")) cfg.top_p = j.at("top_p").get<double>();
  if (j.contains("rng_seed")) cfg.rng_seed = j.at("rng_seed").get<std::uint64_t>();
  return cfg;
}

void ContrastConfig::validate() const {
  if (!(jsd_floor > 0.0)) throw ConfigError("jsd_floor must be > 0");
  if (!(alpha_cap >= 1.0)) throw ConfigError("alpha_cap must be >= 1");
}

std::string ContrastConfig::to_json() const {
  nlohmann::json j;
  j["enabled"] = enabled;
  j["negative_image_seed"] = negative_image_seed;
  j["jsd_floor"] = jsd_floor;
  j["alpha_cap"] = alpha_cap;
  j["align_negative"] = align_negative;
  return j.dump(2);
}

ContrastConfig ContrastConfig::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  ContrastConfig cfg;
  if (j.contains("enabled")) cfg.enabled = j.at("enabled").get<bool>();
  if (j.contains("negative_image_seed")) {
    cfg.negative_image_seed = j.at("negative_image_seed").get<std::uint64_t>();
  }
  if (j.contains("jsd_floor")) cfg.jsd_floor = j.at("jsd_floor").get<double>();
  if (j.contains("alpha_cap")) cfg.alpha_cap = j.at("alpha_cap").get<double>();
  if (j.contains("align_negative")) cfg.align_negative = j.at("align_negative").get<bool>();
  return cfg;
}

LogitDistribution LogitDistribution::logits(std::vector<double> values) {
  LogitDistribution d;
  d.values = std::move(values);
  d.space = Space::Logits;
  return d;
}

LogitDistribution LogitDistribution::probabilities(std::vector<double> values) {
  LogitDistribution d;
  d.values = std::move(values);
  d.space = Space::Probabilities;
  d.validate();
  return d;
}

void LogitDistribution::validate() const {
  if (space == Space::Probabilities) {
    double sum = 0.0;
    for (double v : values) {
      if (!(v >= 0.0) || !std::isfinite(v)) {
        throw InputError("probability distribution must be finite and nonnegative");
      }
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-6) {
      throw InputError("probability distribution does not sum to 1");
    }
  } else {
    for (double v : values) {
      if (std::isnan(v) || v == std::numeric_limits<double>::infinity()) {
        throw InputError("logits must not contain NaN or +inf");
      }
    }
  }
}

LogitDistribution LogitDistribution::to_probabilities() const {
  if (space != Space::Logits) throw InputError("to_probabilities expects a logits variant");
  LogitDistribution d;
  d.values = softmax_probs(values);
  d.space = Space::Probabilities;
  return d;
}

std::vector<double> softmax_probs(std::span<const double> logits, double temperature) {
  std::vector<double> probs(logits.begin(), logits.end());
  if (temperature != 1.0) {
    for (double& v : probs) v /= temperature;
  }
  softmax_inplace(probs);
  return probs;
}

double jsd(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw InputError("jsd requires equal-length distributions");
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    if (p[i] > 0.0) acc += 0.5 * p[i] * std::log2(p[i] / m);
    if (q[i] > 0.0) acc += 0.5 * q[i] * std::log2(q[i] / m);
  }
  return acc;
}

double jsd(const LogitDistribution& p, const LogitDistribution& q) {
  if (p.space != Space::Probabilities || q.space != Space::Probabilities) {
    throw InputError("jsd expects probability distributions");
  }
  p.validate();
  q.validate();
  return jsd(std::span<const double>(p.values), std::span<const double>(q.values));
}

double adaptive_alpha(double jsd_value, const ContrastConfig& config) {
  const double clamped = std::max(jsd_value, config.jsd_floor);
  const double alpha = 1.0 - std::log10(clamped);
  return std::min(alpha, config.alpha_cap);
}

std::vector<double> contrastive_combine(std::span<const double> pos, std::span<const double> neg,
                                        double alpha) {
  if (pos.size() != neg.size()) throw InputError("contrastive_combine length mismatch");
  std::vector<double> out(pos.size());
  // (1 + a) * pos - a * neg, associated so that a == 0 and pos == neg are
  // exact identities.
  for (std::size_t i = 0; i < pos.size(); ++i) out[i] = pos[i] + alpha * (pos[i] - neg[i]);
  return out;
}

LogitDistribution contrastive_combine(const LogitDistribution& pos, const LogitDistribution& neg,
                                      double alpha) {
  if (pos.space != Space::Logits || neg.space != Space::Logits) {
    throw InputError("contrastive_combine expects logits variants");
  }
  return LogitDistribution::logits(contrastive_combine(
      std::span<const double>(pos.values), std::span<const double>(neg.values), alpha));
}

int sample_token(std::span<const double> logits, const GenerationConfig& config, Rng& rng) {
  const int n = static_cast<int>(logits.size());
  if (n == 0) throw InputError("empty logit vector");

  bool any_finite = false;
  for (double v : logits) {
    if (std::isnan(v) || v == std::numeric_limits<double>::infinity()) {
      throw NumericError("non-finite logit");
    }
    if (std::isfinite(v)) any_finite = true;
  }
  if (!any_finite) throw NumericError("all logits are -inf");

  if (config.strategy == Strategy::Greedy) {
    int best = 0;
    for (int i = 1; i < n; ++i) {
      if (logits[i] > logits[best]) best = i;  // lowest index wins ties
    }
    return best;
  }

  const std::vector<double> probs = softmax_probs(logits, config.temperature);

  // Nucleus: keep the smallest prefix of the descending distribution whose
  // cumulative mass reaches top_p (ties broken by token id).
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (probs[a] != probs[b]) return probs[a] > probs[b];
    return a < b;
  });

  double mass = 0.0;
  std::size_t kept = 0;
  for (; kept < order.size(); ++kept) {
    mass += probs[order[kept]];
    if (mass >= config.top_p) {
      ++kept;
      break;
    }
  }
  if (kept == 0) kept = 1;
  if (kept > order.size()) kept = order.size();

  const double draw = rng.uniform() * mass;
  double acc = 0.0;
  for (std::size_t i = 0; i < kept; ++i) {
    acc += probs[order[i]];
    if (draw < acc) return order[i];
  }
  return order[kept - 1];
}

GenerationResult generate(const ModelParams& params, const SyntheticImage& image,
                          const std::vector<int>& prompt, const align::AlignConfig& align_cfg,
                          const ContrastConfig& contrast_cfg, const GenerationConfig& gen_cfg) {
  gen_cfg.validate();
  contrast_cfg.validate();
  align_cfg.validate(params.config.num_layers);
  if (prompt.empty()) throw InputError("prompt must not be empty");

  const int context_len = image.patches + static_cast<int>(prompt.size());
  // The final sampled token is never fed back, so the last occupied
  // position is context_len - 1 + (max_new_tokens - 1) + 1.
  if (context_len - 1 + gen_cfg.max_new_tokens > params.config.max_context) {
    throw CapacityError("prompt plus max_new_tokens exceeds max_context");
  }

  const int visual_end = image.patches - 1;
  const int prompt_end = context_len - 1;

  const LayerHook align_hook = align::make_alignment_hook(align_cfg);
  const LayerHook neg_hook = contrast_cfg.align_negative ? align_hook : LayerHook{};

  const std::vector<std::vector<double>> pos_embeds = encode_image(image, params);
  std::vector<Session::Input> context;
  context.reserve(context_len);
  for (const auto& e : pos_embeds) context.push_back(Session::Input::embedding(e));
  for (std::size_t i = 0; i + 1 < prompt.size(); ++i) {
    context.push_back(Session::Input::token(prompt[i]));
  }

  Session pos_session(params, visual_end, prompt_end);
  if (!context.empty()) pos_session.prefill(context);

  std::optional<Session> neg_session;
  if (contrast_cfg.enabled) {
    const SyntheticImage neg_image = SyntheticImage::random(
        image.patches, image.dim, contrast_cfg.negative_image_seed);
    const std::vector<std::vector<double>> neg_embeds = encode_image(neg_image, params);
    std::vector<Session::Input> neg_context;
    neg_context.reserve(context_len);
    for (const auto& e : neg_embeds) neg_context.push_back(Session::Input::embedding(e));
    for (std::size_t i = 0; i + 1 < prompt.size(); ++i) {
      neg_context.push_back(Session::Input::token(prompt[i]));
    }
    neg_session.emplace(params, visual_end, prompt_end);
    if (!neg_context.empty()) neg_session->prefill(neg_context);
  }

  Rng rng(gen_cfg.rng_seed);
  GenerationResult result;
  Session::Input current = Session::Input::token(prompt.back());

  for (int t = 0; t < gen_cfg.max_new_tokens; ++t) {
    const StepResult pos_step = pos_session.step(current, align_hook);

    double step_jsd = 0.0;
    double alpha = 0.0;
    LogitDistribution combined = LogitDistribution::logits(pos_step.logits);
    if (contrast_cfg.enabled) {
      const StepResult neg_step = neg_session->step(current, neg_hook);
      const LogitDistribution pos = LogitDistribution::logits(pos_step.logits);
      const LogitDistribution neg = LogitDistribution::logits(neg_step.logits);
      step_jsd = jsd(pos.to_probabilities(), neg.to_probabilities());
      alpha = adaptive_alpha(step_jsd, contrast_cfg);
      combined = contrastive_combine(pos, neg, alpha);
    }

    const int token = sample_token(combined.values, gen_cfg, rng);
    result.tokens.push_back(token);
    result.trace.push_back({t, token, step_jsd, alpha});
    current = Session::Input::token(token);
  }
  return result;
}

void write_trace_jsonl(std::ostream& out, const GenerationResult& result,
                       const GenerationConfig& gen_cfg) {
  for (const auto& s : result.trace) {
    nlohmann::json j;
    j["step"] = s.step;
    j["token"] = s.token;
    j["jsd"] = s.jsd;
    j["alpha"] = s.alpha;
    j["strategy"] = strategy_name(gen_cfg.strategy);
    out << j.dump() << '\n';
  }
}

const char* strategy_name(Strategy s) { return s == Strategy::Greedy ? "greedy" : "sample"; }

}  // namespace sevilab::decode
