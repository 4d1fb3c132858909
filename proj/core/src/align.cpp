#include "sevilab/align.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include <nlohmann/json.hpp>

namespace sevilab::align {

namespace {

constexpr double kRowSumTol = 1e-4;

const char* mix_domain_name(MixDomain d) {
  return d == MixDomain::RawScores ? "raw_scores" : "probabilities";
}

MixDomain mix_domain_from_name(const std::string& s) {
  if (s == "raw_scores") return MixDomain::RawScores;
  if (s == "probabilities") return MixDomain::Probabilities;
  throw ConfigError("mix_domain must be raw_scores or probabilities");
}

}  // namespace

void AlignConfig::validate(int num_layers) const {
  if (!(kappa > 0.0 && kappa < 1.0)) throw ConfigError("kappa must lie in (0, 1)");
  if (!(omega >= 0.0) || !std::isfinite(omega)) throw ConfigError("omega must be >= 0 and finite");
  if (start_layer < 1 || start_layer > num_layers + 1) {
    throw ConfigError("start_layer must lie in [1, num_layers + 1]");
  }
}

std::string AlignConfig::to_json() const {
  nlohmann::json j;
  j["kappa"] = kappa;
  j["omega"] = omega;
  j["start_layer"] = start_layer;
  j["mix_domain"] = mix_domain_name(mix_domain);
  return j.dump(2);
}

AlignConfig AlignConfig::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("align config is not valid JSON: ") + e.what());
  }
  AlignConfig cfg;
  if (j.contains("kappa")) cfg.kappa = j.at("kappa").get<double>();
  if (j.contains("omega")) cfg.omega = j.at("omega").get<double>();
  if (j.contains("start_layer")) cfg.start_layer = j.at("start_layer").get<int>();
  if (j.contains("mix_domain")) cfg.mix_domain = mix_domain_from_name(j.at("mix_domain").get<std::string>());
  return cfg;
}

HeadPartition categorize_heads(const AttentionRows& normalized_row, const SequenceLayout& layout,
                               double kappa) {
  const int heads = normalized_row.heads;
  const int keys = normalized_row.keys;
  const int e = layout.visual_end;

  HeadPartition part;
  for (int h = 0; h < heads; ++h) {
    double sem_sum = 0.0, other_sum = 0.0;
    double sem_max = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < keys; ++j) {
      const double w = normalized_row.at(h, j);
      if (j > e) {
        sem_sum += w;
        sem_max = std::max(sem_max, w);
      } else {
        other_sum += w;
      }
    }
    if (std::abs(sem_sum + other_sum - 1.0) > kRowSumTol) {
      throw InputError("categorize_heads requires normalized rows");
    }
    if (sem_sum > other_sum) {
      if (sem_max > kappa * sem_sum) {
        part.core_semantic_heads.push_back(h);
      } else {
        part.global_semantic_heads.push_back(h);
      }
    } else {
      part.other_heads.push_back(h);
    }
  }
  return part;
}

AttentionRows align_attention(const AttentionRows& raw_row, const SequenceLayout& layout,
                              const AlignConfig& config) {
  const int heads = raw_row.heads;
  const int keys = raw_row.keys;

  for (double v : raw_row.scores) {
    if (!std::isfinite(v)) throw NumericError("align_attention input is not finite");
  }
  if (config.omega == 0.0) return raw_row;  // exact identity

  AttentionRows probs = raw_row;
  for (int h = 0; h < heads; ++h) softmax_inplace(probs.row(h));
  const HeadPartition part = categorize_heads(probs, layout, config.kappa);

  const bool prob_domain = config.mix_domain == MixDomain::Probabilities;
  AttentionRows mixed = prob_domain ? probs : raw_row;
  const AttentionRows source = mixed;  // pre-stage snapshot for pooled targets
  const double omega = config.omega;

  // Stage 1: global semantic heads guide the other heads (average pooling).
  if (!part.other_heads.empty() && !part.global_semantic_heads.empty()) {
    std::vector<double> m1(keys, 0.0);
    for (int h : part.global_semantic_heads) {
      for (int j = 0; j < keys; ++j) m1[j] += source.at(h, j);
    }
    const double inv = 1.0 / static_cast<double>(part.global_semantic_heads.size());
    for (int j = 0; j < keys; ++j) m1[j] *= inv;
    for (int h : part.other_heads) {
      for (int j = 0; j < keys; ++j) {
        mixed.at(h, j) = (mixed.at(h, j) + omega * m1[j]) / (1.0 + omega);
      }
    }
  }

  // Stage 2: core semantic heads guide the global semantic heads (max
  // pooling over the untouched core rows).
  if (!part.core_semantic_heads.empty() && !part.global_semantic_heads.empty()) {
    std::vector<double> m2(keys, -std::numeric_limits<double>::infinity());
    for (int h : part.core_semantic_heads) {
      for (int j = 0; j < keys; ++j) m2[j] = std::max(m2[j], source.at(h, j));
    }
    for (int h : part.global_semantic_heads) {
      double sum = 0.0;
      for (int j = 0; j < keys; ++j) {
        mixed.at(h, j) = (mixed.at(h, j) + omega * m2[j]) / (1.0 + omega);
        sum += mixed.at(h, j);
      }
      if (prob_domain) {
        // The max-pooled target is not a distribution; restore row sums.
        for (int j = 0; j < keys; ++j) mixed.at(h, j) /= sum;
      }
    }
  }

  return mixed;
}

AlignConfig preset(Mode mode) {
  AlignConfig cfg;
  cfg.kappa = 0.2;
  if (mode == Mode::Focused) {
    cfg.omega = 4.0;
    cfg.start_layer = 5;
  } else {
    cfg.omega = 0.5;
    cfg.start_layer = 9;
  }
  return cfg;
}

const char* mode_name(Mode mode) { return mode == Mode::Focused ? "focused" : "balanced"; }

AlignConfig clamp_to_depth(AlignConfig config, int num_layers, std::ostream* warn) {
  if (config.start_layer > num_layers + 1) {
    if (warn) {
      *warn << "warning: start_layer " << config.start_layer << " exceeds model depth "
            << num_layers << "; clamping to " << (num_layers + 1) << " (alignment disabled)\n";
    }
    config.start_layer = num_layers + 1;
  }
  if (config.start_layer < 1) {
    if (warn) *warn << "warning: start_layer below 1; clamping to 1\n";
    config.start_layer = 1;
  }
  return config;
}

LayerHook make_alignment_hook(AlignConfig config) {
  return [config](const HookContext& ctx) -> HookOutcome {
    if (ctx.layer < config.start_layer) return HookOutcome::pass_through();
    AttentionRows rows = align_attention(ctx.raw, ctx.layout, config);
    const AttnDomain domain = (config.omega != 0.0 && config.mix_domain == MixDomain::Probabilities)
                                  ? AttnDomain::Probabilities
                                  : AttnDomain::RawScores;
    return HookOutcome::replace(std::move(rows), domain);
  };
}

void VisualBoostConfig::validate(int num_layers) const {
  if (!std::isfinite(factor) || factor < 1.0) throw ConfigError("boost factor must be >= 1");
  if (first_layer < 1 || last_layer < first_layer || last_layer > num_layers) {
    throw ConfigError("boost layer range must lie within model depth");
  }
}

AttentionRows boost_visual_attention(const AttentionRows& raw_row, const SequenceLayout& layout,
                                     const VisualBoostConfig& config) {
  AttentionRows out = raw_row;
  const int limit = std::min(layout.visual_end, raw_row.keys - 1);
  for (int h = 0; h < raw_row.heads; ++h) {
    for (int j = 0; j <= limit; ++j) out.at(h, j) *= config.factor;
  }
  return out;
}

LayerHook make_visual_boost_hook(VisualBoostConfig config) {
  return [config](const HookContext& ctx) -> HookOutcome {
    if (ctx.layer < config.first_layer || ctx.layer > config.last_layer) {
      return HookOutcome::pass_through();
    }
    return HookOutcome::replace(boost_visual_attention(ctx.raw, ctx.layout, config),
                                AttnDomain::RawScores);
  };
}

}  // namespace sevilab::align
