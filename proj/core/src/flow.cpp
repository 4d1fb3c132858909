#include "sevilab/flow.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include "sevilab/align.hpp"
#include "sevilab/decode.hpp"

namespace sevilab::flow {

namespace {

// Head-averaged attention matrix for one layer, n x n row-major.
std::vector<double> head_average(const AttentionTensor& t) {
  const int n = t.query_len;
  std::vector<double> avg(static_cast<std::size_t>(n) * n, 0.0);
  for (int h = 0; h < t.heads; ++h) {
    for (int q = 0; q < n; ++q) {
      for (int k = 0; k < n; ++k) avg[static_cast<std::size_t>(q) * n + k] += t.at(h, q, k);
    }
  }
  const double inv = 1.0 / t.heads;
  for (auto& v : avg) v *= inv;
  return avg;
}

void check_tensor(const AttentionTensor& t, int expected_len) {
  if (!t.normalized) throw InputError("flow analysis requires normalized attention");
  if (t.query_len != t.key_len) throw InputError("flow analysis requires square attention");
  if (expected_len > 0 && t.query_len != expected_len) {
    throw InputError("attention tensors disagree on sequence length");
  }
}

}  // namespace

FlowMatrix FlowMatrix::identity(int n) {
  FlowMatrix f;
  f.layer = 0;
  f.size = n;
  f.contrib.assign(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) f.at(i, i) = 1.0;
  return f;
}

FlowMatrix rollout_step(const FlowMatrix& prev, const AttentionTensor& layer_attention) {
  check_tensor(layer_attention, prev.size);
  const int n = prev.size;
  const std::vector<double> w = head_average(layer_attention);

  FlowMatrix next;
  next.layer = prev.layer + 1;
  next.size = n;
  next.contrib.assign(static_cast<std::size_t>(n) * n, 0.0);
  // F'[:, j] = 0.5 F[:, j] + 0.5 sum_k W[j, k] F[:, k]
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      double acc = 0.5 * prev.at(i, j);
      for (int k = 0; k <= j; ++k) {  // W[j, k] == 0 for k > j (causal)
        acc += 0.5 * w[static_cast<std::size_t>(j) * n + k] * prev.at(i, k);
      }
      next.at(i, j) = acc;
    }
  }
  return next;
}

std::vector<FlowMatrix> rollout_all(const std::vector<AttentionTensor>& attention,
                                    const SequenceLayout& layout) {
  if (attention.empty()) throw InputError("rollout needs at least one layer");
  const int n = attention.front().query_len;
  if (layout.total_len != n) throw InputError("layout length does not match attention");

  std::vector<FlowMatrix> flows;
  flows.reserve(attention.size() + 1);
  flows.push_back(FlowMatrix::identity(n));
  for (const auto& t : attention) flows.push_back(rollout_step(flows.back(), t));
  return flows;
}

namespace {

FlowSummary summarize(const FlowMatrix& f, const SequenceLayout& layout) {
  const int n = f.size;
  const int e = layout.visual_end;
  FlowSummary s;
  s.layer = f.layer;
  double vv = 0.0, vt = 0.0;
  int n_visual = 0, n_text = 0;
  for (int j = 0; j < n; ++j) {
    double col = 0.0;
    for (int i = 0; i <= e; ++i) col += f.at(i, j);
    if (j <= e) {
      vv += col;
      ++n_visual;
    } else {
      vt += col;
      ++n_text;
    }
  }
  s.vision_to_vision = n_visual > 0 ? vv / n_visual : 0.0;
  s.vision_to_text = n_text > 0 ? vt / n_text : 0.0;
  return s;
}

}  // namespace

std::vector<FlowSummary> compute_flow(const std::vector<AttentionTensor>& attention,
                                      const SequenceLayout& layout) {
  if (attention.empty()) throw InputError("compute_flow needs at least one layer");
  const int n = attention.front().query_len;
  if (layout.visual_end >= n - 1) throw InputError("no semantic positions in layout");

  std::vector<FlowSummary> out;
  const std::vector<FlowMatrix> flows = rollout_all(attention, layout);
  out.reserve(flows.size());
  for (const auto& f : flows) out.push_back(summarize(f, layout));
  return out;
}

std::vector<double> semantic_attention_share(const std::vector<AttentionTensor>& attention,
                                             const SequenceLayout& layout) {
  std::vector<double> shares;
  shares.reserve(attention.size());
  for (const auto& t : attention) {
    check_tensor(t, 0);
    const int last = t.query_len - 1;
    double total = 0.0;
    for (int h = 0; h < t.heads; ++h) {
      for (int j = layout.visual_end + 1; j < t.key_len; ++j) total += t.at(h, last, j);
    }
    shares.push_back(total / t.heads);
  }
  return shares;
}

std::vector<PeakStat> peak_attention_stats(const std::vector<AttentionTensor>& attention,
                                           const SequenceLayout& layout, double kappa) {
  std::vector<PeakStat> stats;
  for (const auto& t : attention) {
    check_tensor(t, 0);
    const AttentionRows row = t.query_row(t.query_len - 1);
    const align::HeadPartition part = align::categorize_heads(row, layout, kappa);

    std::vector<int> semantic = part.core_semantic_heads;
    semantic.insert(semantic.end(), part.global_semantic_heads.begin(),
                    part.global_semantic_heads.end());
    std::sort(semantic.begin(), semantic.end());

    for (int h : semantic) {
      double sum = 0.0, mx = 0.0;
      for (int j = layout.visual_end + 1; j < row.keys; ++j) {
        sum += row.at(h, j);
        mx = std::max(mx, row.at(h, j));
      }
      stats.push_back({t.layer, h, mx / sum});
    }
  }
  return stats;
}

LayerHook make_vision_mask_hook(int mask_start_layer) {
  return [mask_start_layer](const HookContext& ctx) -> HookOutcome {
    if (ctx.layer < mask_start_layer) return HookOutcome::pass_through();
    if (ctx.query_pos <= ctx.layout.visual_end) {
      // Visual queries keep their rows; masking them entirely would leave
      // nothing visible under the causal mask.
      return HookOutcome::pass_through();
    }
    AttentionRows rows = ctx.raw;
    const int limit = std::min(ctx.layout.visual_end, rows.keys - 1);
    for (int h = 0; h < rows.heads; ++h) {
      for (int j = 0; j <= limit; ++j) {
        rows.at(h, j) = -std::numeric_limits<double>::infinity();
      }
    }
    return HookOutcome::replace(std::move(rows), AttnDomain::RawScores);
  };
}

MaskProbeResult vision_mask_probe(const ModelParams& params, const SyntheticImage& image,
                                  const std::vector<int>& prompt, int mask_start_layer) {
  const int num_layers = params.config.num_layers;
  if (mask_start_layer < 1 || mask_start_layer > num_layers + 1) {
    throw InputError("mask_start_layer must lie in [1, num_layers + 1]");
  }
  if (prompt.empty()) throw InputError("probe prompt must not be empty");

  const std::vector<std::vector<double>> embeds = encode_image(image, params);
  std::vector<Session::Input> inputs;
  inputs.reserve(embeds.size() + prompt.size());
  for (const auto& e : embeds) inputs.push_back(Session::Input::embedding(e));
  for (int t : prompt) inputs.push_back(Session::Input::token(t));

  const int visual_end = image.patches - 1;
  const int prompt_end = image.patches + static_cast<int>(prompt.size()) - 1;

  Session regular(params, visual_end, prompt_end);
  const PrefillResult base = regular.prefill(inputs);

  Session masked(params, visual_end, prompt_end);
  const PrefillResult alt = masked.prefill(inputs, make_vision_mask_hook(mask_start_layer));

  const auto p = decode::LogitDistribution::logits(base.logits.back()).to_probabilities();
  const auto q = decode::LogitDistribution::logits(alt.logits.back()).to_probabilities();

  MaskProbeResult result;
  result.mask_start_layer = mask_start_layer;
  result.jsd = decode::jsd(p, q);
  result.log_jsd =
      result.jsd > 0.0 ? std::log(result.jsd) : -std::numeric_limits<double>::infinity();
  return result;
}

void write_flow_csv(std::ostream& out, const std::vector<FlowSummary>& summaries) {
  out << "layer,vision_to_vision,vision_to_text\n";
  for (const auto& s : summaries) {
    out << s.layer << ',' << format_real(s.vision_to_vision) << ','
        << format_real(s.vision_to_text) << '\n';
  }
}

void write_probe_csv(std::ostream& out, const std::vector<MaskProbeResult>& results) {
  out << "mask_start_layer,jsd,log_jsd\n";
  for (const auto& r : results) {
    out << r.mask_start_layer << ',' << format_real(r.jsd) << ',' << format_real(r.log_jsd)
        << '\n';
  }
}

void write_stats_csv(std::ostream& out, const std::vector<PeakStat>& stats) {
  out << "layer,head,ratio\n";
  for (const auto& s : stats) {
    out << s.layer << ',' << s.head << ',' << format_real(s.ratio) << '\n';
  }
}

}  // namespace sevilab::flow
