#include "sevilab/types.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <utility>

#include <nlohmann/json.hpp>

#include "sevilab/rng.hpp"

namespace sevilab {

void ModelConfig::validate() const {
  if (num_layers < 1) throw ConfigError("num_layers must be >= 1");
  if (num_heads < 1) throw ConfigError("num_heads must be >= 1");
  if (model_dim < 1) throw ConfigError("model_dim must be >= 1");
  if (model_dim % num_heads != 0) throw ConfigError("model_dim must be divisible by num_heads");
  if (vocab_size < 1) throw ConfigError("vocab_size must be >= 1");
  if (max_context < 2) throw ConfigError("max_context must be >= 2");
  if (!(init_scale >= 0.0) || !std::isfinite(init_scale)) {
    throw ConfigError("init_scale must be a finite nonnegative real");
  }
}

std::string ModelConfig::to_json() const {
  nlohmann::json j;
  j["num_layers"] = num_layers;
  j["num_heads"] = num_heads;
  j["model_dim"] = model_dim;
  j["vocab_size"] = vocab_size;
  j["max_context"] = max_context;
  j["init_seed"] = init_seed;
  j["init_scale"] = init_scale;
  return j.dump(2);
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config is not valid JSON: ") + e.what());
  }
  ModelConfig cfg;
  try {
    if (j.contains("num_layers")) cfg.num_layers = j.at("num_layers").get<int>();
    if (j.contains("num_heads")) cfg.num_heads = j.at("num_heads").get<int>();
    if (j.contains("model_dim")) cfg.model_dim = j.at("model_dim").get<int>();
    if (j.contains("vocab_size")) cfg.vocab_size = j.at("vocab_size").get<int>();
    if (j.contains("max_context")) cfg.max_context = j.at("max_context").get<int>();
    if (j.contains("init_seed")) cfg.init_seed = j.at("init_seed").get<std::uint64_t>();
    if (j.contains("init_scale")) cfg.init_scale = j.at("init_scale").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad model config field: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

void SequenceLayout::validate(int max_context) const {
  if (visual_end < 0) throw InputError("visual_end must be >= 0");
  if (prompt_end <= visual_end) throw InputError("prompt_end must be > visual_end");
  if (total_len <= prompt_end) throw InputError("total_len must be > prompt_end");
  if (total_len > max_context) throw CapacityError("sequence exceeds max_context");
}

SyntheticImage SyntheticImage::random(int patches, int dim, std::uint64_t seed) {
  if (patches < 1 || dim < 1) throw InputError("image must have at least one patch and dimension");
  SyntheticImage img;
  img.patches = patches;
  img.dim = dim;
  img.seed = seed;
  img.features.resize(static_cast<std::size_t>(patches) * dim);
  Rng rng(seed);
  for (auto& f : img.features) f = static_cast<float>(rng.gaussian());
  return img;
}

AttentionRows AttentionTensor::query_row(int q) const {
  AttentionRows rows(heads, key_len);
  for (int h = 0; h < heads; ++h) {
    for (int k = 0; k < key_len; ++k) rows.at(h, k) = at(h, q, k);
  }
  return rows;
}

void softmax_inplace(std::span<double> row) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : row) {
    if (std::isnan(v) || v == std::numeric_limits<double>::infinity()) {
      throw NumericError("non-finite attention score");
    }
    mx = std::max(mx, v);
  }
  if (mx == -std::numeric_limits<double>::infinity()) {
    throw NumericError("attention row is fully masked");
  }
  double sum = 0.0;
  for (double& v : row) {
    v = std::exp(v - mx);  // exp(-inf) == 0 handles masked keys
    sum += v;
  }
  for (double& v : row) v /= sum;
}

std::string format_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

LayerHook chain_hooks(std::vector<LayerHook> hooks) {
  return [hooks = std::move(hooks)](const HookContext& ctx) -> HookOutcome {
    AttentionRows working = ctx.raw;
    bool replaced = false;
    AttnDomain domain = AttnDomain::RawScores;
    for (const auto& hook : hooks) {
      if (!hook) continue;
      if (replaced && domain == AttnDomain::Probabilities) {
        throw InputError("raw-domain hook chained after a probability replacement");
      }
      HookContext sub{ctx.layer, ctx.query_pos, ctx.layout, working};
      HookOutcome out = hook(sub);
      if (out.replaced) {
        working = std::move(out.rows);
        domain = out.domain;
        replaced = true;
      }
    }
    if (!replaced) return HookOutcome::pass_through();
    return HookOutcome::replace(std::move(working), domain);
  };
}

}  // namespace sevilab
