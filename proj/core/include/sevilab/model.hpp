#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "sevilab/types.hpp"

namespace sevilab {

// One named weight matrix. Parameters are stored as float32 (the dump
// format); all activation math runs in double.
struct Tensor {
  std::string name;
  std::vector<int> shape;
  std::vector<float> data;

  std::size_t size() const { return data.size(); }
  float at(int r, int c) const { return data[static_cast<std::size_t>(r) * shape[1] + c]; }
};

struct ModelParams {
  ModelConfig config;
  Tensor token_embed;  // vocab_size x model_dim
  Tensor pos_embed;    // max_context x model_dim
  Tensor visual_proj;  // model_dim x model_dim

  struct LayerWeights {
    Tensor wq, wk, wv, wo;  // model_dim x model_dim
    Tensor ff_in;           // model_dim x ff_dim
    Tensor ff_out;          // ff_dim x model_dim
  };
  std::vector<LayerWeights> layers;
  Tensor unembed;  // model_dim x vocab_size

  // Fixed dump/checksum order.
  std::vector<const Tensor*> tensor_list() const;
};

// Fills every weight matrix from a seeded Gaussian scaled by
// init_scale / sqrt(model_dim). Identical (config, seed) gives bit-identical
// parameters. Layer norms are parameter-free (unit gain, zero bias).
ModelParams init_model(const ModelConfig& config);

// FNV-1a over the float bit patterns of all tensors, in dump order.
std::uint64_t parameter_checksum(const ModelParams& params);

// Flat little-endian float32 blob plus a JSON sidecar listing tensor names,
// shapes and byte offsets.
void dump_parameters(const ModelParams& params, const std::string& bin_path,
                     const std::string& sidecar_path);

// One embedding per patch: deterministic linear projection (no bias) of the
// patch features through visual_proj.
std::vector<std::vector<double>> encode_image(const SyntheticImage& image,
                                              const ModelParams& params);

struct StepResult {
  std::vector<double> logits;            // vocab_size
  std::vector<AttentionRows> raw_rows;   // per layer: scores handed to softmax
  std::vector<AttentionRows> norm_rows;  // per layer: weights used for value mixing
};

struct PrefillResult {
  std::vector<std::vector<double>> logits;  // per position
  std::vector<AttentionTensor> attention;   // per layer, normalized, rows padded with zeros
};

// A single-threaded decoding session over immutable, shareable parameters.
// Holds the KV cache and the running sequence layout.
class Session {
 public:
  struct Input {
    std::variant<int, std::vector<double>> payload;
    static Input token(int id) { return {id}; }
    static Input embedding(std::vector<double> e) { return {std::move(e)}; }
  };

  // visual_end / prompt_end describe the planned context; the current
  // length starts at zero and grows with each step.
  Session(const ModelParams& params, int visual_end, int prompt_end);

  // Incremental decode of one position. Raw per-head scores for the current
  // query row are offered to the hook before softmax at every layer.
  StepResult step(const Input& input, const LayerHook& hook = {});

  // Batched prefill from an empty session. Equivalent to repeated step()
  // within 1e-6 on logits; returns full per-layer attention matrices.
  PrefillResult prefill(std::span<const Input> inputs, const LayerHook& hook = {});

  SequenceLayout layout() const;
  int length() const { return len_; }
  const ModelConfig& config() const { return params_->config; }

 private:
  std::vector<double> embed_input(const Input& input, int pos) const;
  // Runs one attention sub-block for the query at `pos` (layer l, 0-based),
  // reading keys/values 0..pos from the cache. Returns mixed output.
  std::vector<double> attend(int l, int pos, std::span<const double> q,
                             const LayerHook& hook, AttentionRows* raw_out,
                             AttentionRows* norm_out) const;

  const ModelParams* params_;
  int visual_end_;
  int prompt_end_;
  int len_ = 0;
  // Per layer: keys / values for all cached positions, len x model_dim.
  std::vector<std::vector<double>> kcache_;
  std::vector<std::vector<double>> vcache_;
};

}  // namespace sevilab
