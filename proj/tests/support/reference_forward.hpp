#pragma once

// Naive forward-pass oracle written against the parameter container before
// the engine existed: no KV cache, no batching, every position recomputed
// with plain nested loops. Returns the logits of the last position.

#include <cmath>
#include <vector>

#include "sevilab/model.hpp"

namespace refforward {

inline std::vector<double> layer_norm(const std::vector<double>& x) {
  const int n = static_cast<int>(x.size());
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= n;
  const double denom = std::sqrt(var + 1e-5);
  std::vector<double> out(n);
  for (int i = 0; i < n; ++i) out[i] = (x[i] - mean) / denom;
  return out;
}

inline double gelu(double v) { return 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))); }

// y = x * M for a rows x cols float tensor.
inline std::vector<double> matvec(const std::vector<double>& x, const sevilab::Tensor& m) {
  const int rows = m.shape[0];
  const int cols = m.shape[1];
  std::vector<double> y(cols, 0.0);
  for (int c = 0; c < cols; ++c) {
    double acc = 0.0;
    for (int r = 0; r < rows; ++r) acc += x[r] * static_cast<double>(m.data[static_cast<std::size_t>(r) * cols + c]);
    y[c] = acc;
  }
  return y;
}

// inputs: per-position embeddings already including position embeddings.
inline std::vector<double> last_logits(const sevilab::ModelParams& params,
                                       const std::vector<std::vector<double>>& inputs) {
  const auto& cfg = params.config;
  const int n = static_cast<int>(inputs.size());
  const int dim = cfg.model_dim;
  const int heads = cfg.num_heads;
  const int hd = cfg.head_dim();

  std::vector<std::vector<double>> x = inputs;

  for (int l = 0; l < cfg.num_layers; ++l) {
    const auto& w = params.layers[l];

    std::vector<std::vector<double>> q(n), k(n), v(n);
    for (int p = 0; p < n; ++p) {
      const std::vector<double> h = layer_norm(x[p]);
      q[p] = matvec(h, w.wq);
      k[p] = matvec(h, w.wk);
      v[p] = matvec(h, w.wv);
    }

    std::vector<std::vector<double>> attn_out(n, std::vector<double>(dim, 0.0));
    for (int p = 0; p < n; ++p) {
      std::vector<double> mixed(dim, 0.0);
      for (int h = 0; h < heads; ++h) {
        std::vector<double> scores(p + 1, 0.0);
        for (int j = 0; j <= p; ++j) {
          double acc = 0.0;
          for (int d = 0; d < hd; ++d) acc += q[p][h * hd + d] * k[j][h * hd + d];
          scores[j] = acc / std::sqrt(static_cast<double>(hd));
        }
        double mx = scores[0];
        for (double s : scores) mx = std::max(mx, s);
        double sum = 0.0;
        for (double& s : scores) {
          s = std::exp(s - mx);
          sum += s;
        }
        for (double& s : scores) s /= sum;
        for (int j = 0; j <= p; ++j) {
          for (int d = 0; d < hd; ++d) mixed[h * hd + d] += scores[j] * v[j][h * hd + d];
        }
      }
      attn_out[p] = matvec(mixed, w.wo);
    }

    for (int p = 0; p < n; ++p) {
      for (int d = 0; d < dim; ++d) x[p][d] += attn_out[p][d];
    }

    for (int p = 0; p < n; ++p) {
      const std::vector<double> h2 = layer_norm(x[p]);
      std::vector<double> ff = matvec(h2, w.ff_in);
      for (double& v2 : ff) v2 = gelu(v2);
      const std::vector<double> out = matvec(ff, w.ff_out);
      for (int d = 0; d < dim; ++d) x[p][d] += out[d];
    }
  }

  const std::vector<double> final_h = layer_norm(x[n - 1]);
  return matvec(final_h, params.unembed);
}

// Embeds a visual-prefix-plus-tokens context the way the session does:
// projected patch features for positions 0..patches-1, token embeddings
// afterwards, position embedding added everywhere.
inline std::vector<std::vector<double>> embed_context(const sevilab::ModelParams& params,
                                                      const sevilab::SyntheticImage& image,
                                                      const std::vector<int>& tokens) {
  const auto& cfg = params.config;
  const int dim = cfg.model_dim;
  std::vector<std::vector<double>> inputs;
  for (int p = 0; p < image.patches; ++p) {
    std::vector<double> feat(dim, 0.0);
    for (int d = 0; d < dim; ++d) feat[d] = static_cast<double>(image.at(p, d));
    std::vector<double> e = matvec(feat, params.visual_proj);
    const int pos = static_cast<int>(inputs.size());
    for (int d = 0; d < dim; ++d) e[d] += static_cast<double>(params.pos_embed.at(pos, d));
    inputs.push_back(std::move(e));
  }
  for (int t : tokens) {
    std::vector<double> e(dim, 0.0);
    const int pos = static_cast<int>(inputs.size());
    for (int d = 0; d < dim; ++d) {
      e[d] = static_cast<double>(params.token_embed.at(t, d)) +
             static_cast<double>(params.pos_embed.at(pos, d));
    }
    inputs.push_back(std::move(e));
  }
  return inputs;
}

}  // namespace refforward
