#include "sevilab/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include <nlohmann/json.hpp>

#include "sevilab/rng.hpp"

namespace sevilab {

namespace {

constexpr double kLnEps = 1e-5;

// Parameter-free layer norm (unit gain, zero bias).
std::vector<double> layer_norm(std::span<const double> x) {
  const int n = static_cast<int>(x.size());
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= n;
  const double denom = std::sqrt(var + kLnEps);
  std::vector<double> out(n);
  for (int i = 0; i < n; ++i) out[i] = (x[i] - mean) / denom;
  return out;
}

double gelu(double v) { return 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))); }

// y = x * M, accumulating in double.
std::vector<double> matvec(std::span<const double> x, const Tensor& m) {
  const int rows = m.shape[0];
  const int cols = m.shape[1];
  std::vector<double> y(cols, 0.0);
  for (int r = 0; r < rows; ++r) {
    const double xr = x[r];
    const float* mrow = m.data.data() + static_cast<std::size_t>(r) * cols;
    for (int c = 0; c < cols; ++c) y[c] += xr * static_cast<double>(mrow[c]);
  }
  return y;
}

void check_finite(std::span<const double> v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericError(std::string("non-finite ") + what);
  }
}

Tensor make_tensor(std::string name, int rows, int cols, Rng& rng, double std_dev) {
  Tensor t;
  t.name = std::move(name);
  t.shape = {rows, cols};
  t.data.resize(static_cast<std::size_t>(rows) * cols);
  for (auto& v : t.data) v = static_cast<float>(rng.gaussian() * std_dev);
  return t;
}

// Validates a hook replacement against the engine contract before use.
void validate_replacement(const HookOutcome& out, int heads, int keys) {
  if (out.rows.heads != heads || out.rows.keys != keys) {
    throw InputError("hook replacement has wrong shape");
  }
  if (out.domain == AttnDomain::RawScores) {
    for (double v : out.rows.scores) {
      if (std::isnan(v) || v == std::numeric_limits<double>::infinity()) {
        throw InputError("hook replacement contains NaN or +inf raw score");
      }
    }
  } else {
    for (int h = 0; h < heads; ++h) {
      double sum = 0.0;
      for (double v : out.rows.row(h)) {
        if (!(v >= 0.0) || !std::isfinite(v)) {
          throw InputError("hook probability replacement must be finite and nonnegative");
        }
        sum += v;
      }
      if (std::abs(sum - 1.0) > 1e-6) {
        throw InputError("hook probability replacement row does not sum to 1");
      }
    }
  }
}

}  // namespace

std::vector<const Tensor*> ModelParams::tensor_list() const {
  std::vector<const Tensor*> list;
  list.push_back(&token_embed);
  list.push_back(&pos_embed);
  list.push_back(&visual_proj);
  for (const auto& l : layers) {
    list.push_back(&l.wq);
    list.push_back(&l.wk);
    list.push_back(&l.wv);
    list.push_back(&l.wo);
    list.push_back(&l.ff_in);
    list.push_back(&l.ff_out);
  }
  list.push_back(&unembed);
  return list;
}

ModelParams init_model(const ModelConfig& config) {
  config.validate();
  Rng rng(config.init_seed);
  const double std_dev = config.init_scale / std::sqrt(static_cast<double>(config.model_dim));
  const int dim = config.model_dim;

  ModelParams params;
  params.config = config;
  params.token_embed = make_tensor("token_embed", config.vocab_size, dim, rng, std_dev);
  params.pos_embed = make_tensor("pos_embed", config.max_context, dim, rng, std_dev);
  params.visual_proj = make_tensor("visual_proj", dim, dim, rng, std_dev);
  params.layers.resize(config.num_layers);
  for (int l = 0; l < config.num_layers; ++l) {
    const std::string prefix = "layer" + std::to_string(l) + ".";
    auto& w = params.layers[l];
    w.wq = make_tensor(prefix + "wq", dim, dim, rng, std_dev);
    w.wk = make_tensor(prefix + "wk", dim, dim, rng, std_dev);
    w.wv = make_tensor(prefix + "wv", dim, dim, rng, std_dev);
    w.wo = make_tensor(prefix + "wo", dim, dim, rng, std_dev);
    w.ff_in = make_tensor(prefix + "ff_in", dim, config.ff_dim(), rng, std_dev);
    w.ff_out = make_tensor(prefix + "ff_out", config.ff_dim(), dim, rng, std_dev);
  }
  params.unembed = make_tensor("unembed", dim, config.vocab_size, rng, std_dev);
  return params;
}

std::uint64_t parameter_checksum(const ModelParams& params) {
  std::uint64_t hash = 14695981039346656037ULL;
  for (const Tensor* t : params.tensor_list()) {
    for (float f : t->data) {
      std::uint32_t bits;
      std::memcpy(&bits, &f, sizeof(bits));
      for (int b = 0; b < 4; ++b) {
        hash ^= (bits >> (8 * b)) & 0xFFu;
        hash *= 1099511628211ULL;
      }
    }
  }
  return hash;
}

void dump_parameters(const ModelParams& params, const std::string& bin_path,
                     const std::string& sidecar_path) {
  std::ofstream bin(bin_path, std::ios::binary);
  if (!bin) throw InputError("cannot open parameter dump file: " + bin_path);

  nlohmann::json sidecar;
  sidecar["dtype"] = "float32";
  sidecar["byte_order"] = "little";
  nlohmann::json tensors = nlohmann::json::array();

  std::uint64_t offset = 0;
  for (const Tensor* t : params.tensor_list()) {
    nlohmann::json entry;
    entry["name"] = t->name;
    entry["shape"] = t->shape;
    entry["offset"] = offset;
    entry["size_bytes"] = static_cast<std::uint64_t>(t->data.size() * 4);
    tensors.push_back(entry);

    for (float f : t->data) {
      std::uint32_t bits;
      std::memcpy(&bits, &f, sizeof(bits));
      if constexpr (std::endian::native == std::endian::big) {
        bits = ((bits & 0xFF000000u) >> 24) | ((bits & 0x00FF0000u) >> 8) |
               ((bits & 0x0000FF00u) << 8) | ((bits & 0x000000FFu) << 24);
      }
      char bytes[4];
      std::memcpy(bytes, &bits, 4);
      bin.write(bytes, 4);
    }
    offset += t->data.size() * 4;
  }
  sidecar["tensors"] = tensors;
  sidecar["total_bytes"] = offset;

  std::ofstream side(sidecar_path);
  if (!side) throw InputError("cannot open parameter sidecar file: " + sidecar_path);
  side << sidecar.dump(2) << "\n";
}

std::vector<std::vector<double>> encode_image(const SyntheticImage& image,
                                              const ModelParams& params) {
  const int dim = params.config.model_dim;
  if (image.dim != dim) throw InputError("image patch dimension does not match model_dim");
  if (image.patches < 1) throw InputError("image has no patches");
  std::vector<std::vector<double>> out;
  out.reserve(image.patches);
  std::vector<double> feat(dim);
  for (int p = 0; p < image.patches; ++p) {
    for (int d = 0; d < dim; ++d) feat[d] = static_cast<double>(image.at(p, d));
    out.push_back(matvec(feat, params.visual_proj));
  }
  return out;
}

Session::Session(const ModelParams& params, int visual_end, int prompt_end)
    : params_(&params), visual_end_(visual_end), prompt_end_(prompt_end) {
  params.config.validate();
  if (visual_end < 0) throw InputError("visual_end must be >= 0");
  if (prompt_end <= visual_end) throw InputError("prompt_end must be > visual_end");
  if (prompt_end >= params.config.max_context) {
    throw CapacityError("prompt_end beyond max_context");
  }
  kcache_.resize(params.config.num_layers);
  vcache_.resize(params.config.num_layers);
}

SequenceLayout Session::layout() const {
  SequenceLayout l;
  l.visual_end = visual_end_;
  l.prompt_end = prompt_end_;
  l.total_len = len_;
  return l;
}

std::vector<double> Session::embed_input(const Input& input, int pos) const {
  const auto& cfg = params_->config;
  const int dim = cfg.model_dim;
  std::vector<double> e(dim, 0.0);
  if (const int* token = std::get_if<int>(&input.payload)) {
    if (*token < 0 || *token >= cfg.vocab_size) throw InputError("token id out of range");
    for (int d = 0; d < dim; ++d) e[d] = static_cast<double>(params_->token_embed.at(*token, d));
  } else {
    const auto& emb = std::get<std::vector<double>>(input.payload);
    if (static_cast<int>(emb.size()) != dim) throw InputError("embedding size != model_dim");
    e = emb;
  }
  for (int d = 0; d < dim; ++d) e[d] += static_cast<double>(params_->pos_embed.at(pos, d));
  return e;
}

std::vector<double> Session::attend(int l, int pos, std::span<const double> q,
                                    const LayerHook& hook, AttentionRows* raw_out,
                                    AttentionRows* norm_out) const {
  const auto& cfg = params_->config;
  const int heads = cfg.num_heads;
  const int hd = cfg.head_dim();
  const int keys = pos + 1;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
  const auto& kc = kcache_[l];
  const auto& vc = vcache_[l];

  AttentionRows raw(heads, keys);
  for (int h = 0; h < heads; ++h) {
    for (int j = 0; j < keys; ++j) {
      double acc = 0.0;
      const double* kj = kc.data() + static_cast<std::size_t>(j) * cfg.model_dim + h * hd;
      for (int d = 0; d < hd; ++d) acc += q[h * hd + d] * kj[d];
      raw.at(h, j) = acc * inv_sqrt;
    }
  }
  check_finite(raw.scores, "attention score");

  AttentionRows norm;
  if (hook) {
    SequenceLayout lay = layout();
    lay.total_len = keys;  // layout as visible to this query row
    HookContext ctx{l + 1, pos, lay, raw};
    HookOutcome out = hook(ctx);
    if (out.replaced) {
      validate_replacement(out, heads, keys);
      if (out.domain == AttnDomain::RawScores) {
        raw = std::move(out.rows);
        norm = raw;
        for (int h = 0; h < heads; ++h) softmax_inplace(norm.row(h));
      } else {
        norm = std::move(out.rows);
      }
    }
  }
  if (norm.heads == 0) {
    norm = raw;
    for (int h = 0; h < heads; ++h) softmax_inplace(norm.row(h));
  }

  std::vector<double> mixed(cfg.model_dim, 0.0);
  for (int h = 0; h < heads; ++h) {
    for (int j = 0; j < keys; ++j) {
      const double w = norm.at(h, j);
      const double* vj = vc.data() + static_cast<std::size_t>(j) * cfg.model_dim + h * hd;
      for (int d = 0; d < hd; ++d) mixed[h * hd + d] += w * vj[d];
    }
  }

  if (raw_out) *raw_out = std::move(raw);
  if (norm_out) *norm_out = std::move(norm);
  return mixed;
}

StepResult Session::step(const Input& input, const LayerHook& hook) {
  const auto& cfg = params_->config;
  if (len_ + 1 > cfg.max_context) throw CapacityError("context window exhausted");
  const int pos = len_;

  StepResult result;
  result.raw_rows.resize(cfg.num_layers);
  result.norm_rows.resize(cfg.num_layers);

  std::vector<double> x = embed_input(input, pos);
  for (int l = 0; l < cfg.num_layers; ++l) {
    const auto& w = params_->layers[l];
    const std::vector<double> h = layer_norm(x);
    const std::vector<double> q = matvec(h, w.wq);
    std::vector<double> k = matvec(h, w.wk);
    std::vector<double> v = matvec(h, w.wv);
    kcache_[l].insert(kcache_[l].end(), k.begin(), k.end());
    vcache_[l].insert(vcache_[l].end(), v.begin(), v.end());

    const std::vector<double> mixed =
        attend(l, pos, q, hook, &result.raw_rows[l], &result.norm_rows[l]);
    const std::vector<double> attn_out = matvec(mixed, w.wo);
    for (int d = 0; d < cfg.model_dim; ++d) x[d] += attn_out[d];

    const std::vector<double> h2 = layer_norm(x);
    std::vector<double> ff = matvec(h2, w.ff_in);
    for (double& fv : ff) fv = gelu(fv);
    const std::vector<double> ff_out = matvec(ff, w.ff_out);
    for (int d = 0; d < cfg.model_dim; ++d) x[d] += ff_out[d];
    check_finite(x, "activation");
  }

  const std::vector<double> final_h = layer_norm(x);
  result.logits = matvec(final_h, params_->unembed);
  check_finite(result.logits, "logit");
  ++len_;
  return result;
}

PrefillResult Session::prefill(std::span<const Input> inputs, const LayerHook& hook) {
  const auto& cfg = params_->config;
  if (len_ != 0) throw InputError("prefill requires an empty session");
  const int n = static_cast<int>(inputs.size());
  if (n < 1) throw InputError("prefill needs at least one input");
  if (n > cfg.max_context) throw CapacityError("prefill exceeds max_context");

  const int heads = cfg.num_heads;
  const int hd = cfg.head_dim();
  const int dim = cfg.model_dim;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));

  PrefillResult result;
  result.attention.reserve(cfg.num_layers);

  std::vector<std::vector<double>> x(n);
  for (int p = 0; p < n; ++p) x[p] = embed_input(inputs[p], p);

  for (int l = 0; l < cfg.num_layers; ++l) {
    const auto& w = params_->layers[l];

    std::vector<std::vector<double>> q(n);
    for (int p = 0; p < n; ++p) {
      const std::vector<double> h = layer_norm(x[p]);
      q[p] = matvec(h, w.wq);
      std::vector<double> k = matvec(h, w.wk);
      std::vector<double> v = matvec(h, w.wv);
      kcache_[l].insert(kcache_[l].end(), k.begin(), k.end());
      vcache_[l].insert(vcache_[l].end(), v.begin(), v.end());
    }

    AttentionTensor tensor(l + 1, heads, n, n, /*normalized=*/true);
    const auto& kc = kcache_[l];
    const auto& vc = vcache_[l];

    for (int p = 0; p < n; ++p) {
      const int keys = p + 1;
      AttentionRows raw(heads, keys);
      for (int h = 0; h < heads; ++h) {
        for (int j = 0; j < keys; ++j) {
          double acc = 0.0;
          const double* kj = kc.data() + static_cast<std::size_t>(j) * dim + h * hd;
          for (int d = 0; d < hd; ++d) acc += q[p][h * hd + d] * kj[d];
          raw.at(h, j) = acc * inv_sqrt;
        }
      }
      check_finite(raw.scores, "attention score");

      AttentionRows norm;
      if (hook) {
        SequenceLayout lay;
        lay.visual_end = visual_end_;
        lay.prompt_end = prompt_end_;
        lay.total_len = keys;
        HookContext ctx{l + 1, p, lay, raw};
        HookOutcome out = hook(ctx);
        if (out.replaced) {
          validate_replacement(out, heads, keys);
          if (out.domain == AttnDomain::RawScores) {
            raw = std::move(out.rows);
            norm = raw;
            for (int h = 0; h < heads; ++h) softmax_inplace(norm.row(h));
          } else {
            norm = std::move(out.rows);
          }
        }
      }
      if (norm.heads == 0) {
        norm = raw;
        for (int h = 0; h < heads; ++h) softmax_inplace(norm.row(h));
      }

      for (int h = 0; h < heads; ++h) {
        for (int j = 0; j < keys; ++j) tensor.at(h, p, j) = norm.at(h, j);
        // future keys stay exactly 0
      }

      std::vector<double> mixed(dim, 0.0);
      for (int h = 0; h < heads; ++h) {
        for (int j = 0; j < keys; ++j) {
          const double wgt = norm.at(h, j);
          const double* vj = vc.data() + static_cast<std::size_t>(j) * dim + h * hd;
          for (int d = 0; d < hd; ++d) mixed[h * hd + d] += wgt * vj[d];
        }
      }
      const std::vector<double> attn_out = matvec(mixed, w.wo);
      for (int d = 0; d < dim; ++d) x[p][d] += attn_out[d];
    }
    result.attention.push_back(std::move(tensor));

    for (int p = 0; p < n; ++p) {
      const std::vector<double> h2 = layer_norm(x[p]);
      std::vector<double> ff = matvec(h2, w.ff_in);
      for (double& fv : ff) fv = gelu(fv);
      const std::vector<double> ff_out = matvec(ff, w.ff_out);
      for (int d = 0; d < dim; ++d) x[p][d] += ff_out[d];
      check_finite(x[p], "activation");
    }
  }

  result.logits.resize(n);
  for (int p = 0; p < n; ++p) {
    const std::vector<double> final_h = layer_norm(x[p]);
    result.logits[p] = matvec(final_h, params_->unembed);
    check_finite(result.logits[p], "logit");
  }
  len_ = n;
  return result;
}

}  // namespace sevilab
