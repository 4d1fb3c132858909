#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "sevilab/errors.hpp"

namespace sevilab {

struct ModelConfig {
  int num_layers = 4;
  int num_heads = 4;
  int model_dim = 64;
  int vocab_size = 256;
  int max_context = 128;
  std::uint64_t init_seed = 42;
  double init_scale = 1.0;

  int head_dim() const { return model_dim / num_heads; }
  int ff_dim() const { return 4 * model_dim; }

  // Throws ConfigError when any dimension constraint is violated.
  void validate() const;

  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

// Partition of the context: positions [0, visual_end] hold visual
// embeddings, (visual_end, prompt_end] the text prompt, and everything
// after prompt_end is generated. Positions > visual_end are semantic.
struct SequenceLayout {
  int visual_end = 0;
  int prompt_end = 1;
  int total_len = 2;

  void validate(int max_context) const;
  bool is_semantic(int pos) const { return pos > visual_end; }
  int semantic_count() const { return total_len - visual_end - 1; }
};

// Seeded stand-in for an encoded image: a grid of Gaussian patch features.
struct SyntheticImage {
  int patches = 0;
  int dim = 0;
  std::uint64_t seed = 0;
  std::vector<float> features;  // patches x dim, row-major

  static SyntheticImage random(int patches, int dim, std::uint64_t seed);
  float at(int patch, int d) const { return features[static_cast<std::size_t>(patch) * dim + d]; }
};

// Attention for a single query position, all heads. Scores are either raw
// (pre-softmax, -inf marks masked keys) or probabilities, depending on
// where the rows came from.
struct AttentionRows {
  int heads = 0;
  int keys = 0;
  std::vector<double> scores;  // heads x keys, row-major

  AttentionRows() = default;
  AttentionRows(int heads_, int keys_)
      : heads(heads_), keys(keys_), scores(static_cast<std::size_t>(heads_) * keys_, 0.0) {}

  std::span<double> row(int h) {
    return {scores.data() + static_cast<std::size_t>(h) * keys, static_cast<std::size_t>(keys)};
  }
  std::span<const double> row(int h) const {
    return {scores.data() + static_cast<std::size_t>(h) * keys, static_cast<std::size_t>(keys)};
  }
  double at(int h, int k) const { return scores[static_cast<std::size_t>(h) * keys + k]; }
  double& at(int h, int k) { return scores[static_cast<std::size_t>(h) * keys + k]; }
};

enum class AttnDomain { RawScores, Probabilities };

// What a per-layer hook hands back: either leave the raw scores alone or
// replace them. Probability replacements are used for value mixing as-is;
// raw replacements go through the engine softmax.
struct HookOutcome {
  bool replaced = false;
  AttnDomain domain = AttnDomain::RawScores;
  AttentionRows rows;

  static HookOutcome pass_through() { return {}; }
  static HookOutcome replace(AttentionRows rows, AttnDomain domain) {
    HookOutcome out;
    out.replaced = true;
    out.domain = domain;
    out.rows = std::move(rows);
    return out;
  }
};

struct HookContext {
  int layer = 1;      // 1-based layer index
  int query_pos = 0;  // absolute position of the query row
  const SequenceLayout& layout;
  const AttentionRows& raw;  // pre-softmax scores for this query row
};

using LayerHook = std::function<HookOutcome(const HookContext&)>;

// Applies hooks left to right. Later hooks see earlier raw replacements; a
// probability replacement must come last (raw-domain hooks cannot run after
// it, that is a caller contract violation).
LayerHook chain_hooks(std::vector<LayerHook> hooks);

// Full per-layer attention, heads x query_len x key_len. Normalized tensors
// hold probabilities with exact zeros at masked future keys; raw tensors
// hold scores with a -inf sentinel there.
struct AttentionTensor {
  int layer = 0;  // 1-based
  int heads = 0;
  int query_len = 0;
  int key_len = 0;
  bool normalized = false;
  std::vector<double> scores;

  AttentionTensor() = default;
  AttentionTensor(int layer_, int heads_, int query_len_, int key_len_, bool normalized_)
      : layer(layer_),
        heads(heads_),
        query_len(query_len_),
        key_len(key_len_),
        normalized(normalized_),
        scores(static_cast<std::size_t>(heads_) * query_len_ * key_len_, 0.0) {}

  double at(int h, int q, int k) const {
    return scores[(static_cast<std::size_t>(h) * query_len + q) * key_len + k];
  }
  double& at(int h, int q, int k) {
    return scores[(static_cast<std::size_t>(h) * query_len + q) * key_len + k];
  }
  // Copy of one query row across all heads.
  AttentionRows query_row(int q) const;
};

// Softmax with max-subtraction over a row that may contain -inf sentinels.
// Throws NumericError when every entry is -inf or any entry is NaN/+inf.
void softmax_inplace(std::span<double> row);

// Prints a real with 9 significant digits (report formatting).
std::string format_real(double v);

}  // namespace sevilab
