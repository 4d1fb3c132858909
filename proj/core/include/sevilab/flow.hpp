#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "sevilab/model.hpp"
#include "sevilab/types.hpp"

namespace sevilab::flow {

// Contribution of input embedding i (row) to representation j (column).
// Columns are convex combinations of the identity, so each column sums to 1
// and entries above the diagonal stay zero.
struct FlowMatrix {
  int layer = 0;  // number of mixing steps applied
  int size = 0;
  std::vector<double> contrib;  // size x size, row-major

  FlowMatrix() = default;
  static FlowMatrix identity(int n);
  double at(int i, int j) const { return contrib[static_cast<std::size_t>(i) * size + j]; }
  double& at(int i, int j) { return contrib[static_cast<std::size_t>(i) * size + j]; }
};

struct FlowSummary {
  int layer = 0;
  double vision_to_vision = 0.0;
  double vision_to_text = 0.0;
};

struct MaskProbeResult {
  int mask_start_layer = 0;
  double jsd = 0.0;      // base-2 Jensen-Shannon divergence, in [0, 1]
  double log_jsd = 0.0;  // natural log; -inf when jsd == 0
};

// One rollout update: F_out[:, j] = 0.5 F[:, j] + 0.5 sum_i W[j, i] F[:, i],
// with W the head-averaged normalized attention for one layer.
FlowMatrix rollout_step(const FlowMatrix& prev, const AttentionTensor& layer_attention);

// Rollout from the identity through every layer. Index 0 is the identity,
// index l the flow after l layers.
std::vector<FlowMatrix> rollout_all(const std::vector<AttentionTensor>& attention,
                                    const SequenceLayout& layout);

// Per-layer mean summed visual-input contribution to visual targets
// (vision_to_vision) and to semantic targets (vision_to_text). Entry 0
// describes the identity flow: exactly (1, 0).
std::vector<FlowSummary> compute_flow(const std::vector<AttentionTensor>& attention,
                                      const SequenceLayout& layout);

// Per layer: mean over heads of the final query row's attention mass on
// semantic keys.
std::vector<double> semantic_attention_share(const std::vector<AttentionTensor>& attention,
                                             const SequenceLayout& layout);

struct PeakStat {
  int layer = 0;  // 1-based
  int head = 0;
  double ratio = 0.0;  // max semantic weight / total semantic mass, in (0, 1]
};

// One ratio per (layer, semantic head) on the final query row, emitted raw
// for external density estimation.
std::vector<PeakStat> peak_attention_stats(const std::vector<AttentionTensor>& attention,
                                           const SequenceLayout& layout, double kappa);

// Hook that removes visual keys from the view of semantic queries at every
// layer >= mask_start_layer (raw scores set to -inf). Visual queries are
// left untouched so no attention row becomes fully masked.
LayerHook make_vision_mask_hook(int mask_start_layer);

// Runs a regular and a vision-masked forward pass over image + prompt and
// reports the base-2 JSD between the two next-token distributions.
// mask_start_layer == num_layers + 1 masks nothing.
MaskProbeResult vision_mask_probe(const ModelParams& params, const SyntheticImage& image,
                                  const std::vector<int>& prompt, int mask_start_layer);

// CSV reports, reals printed with 9 significant digits.
void write_flow_csv(std::ostream& out, const std::vector<FlowSummary>& summaries);
void write_probe_csv(std::ostream& out, const std::vector<MaskProbeResult>& results);
void write_stats_csv(std::ostream& out, const std::vector<PeakStat>& stats);

}  // namespace sevilab::flow
