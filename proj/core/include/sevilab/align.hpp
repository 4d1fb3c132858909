#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "sevilab/types.hpp"

namespace sevilab::align {

enum class MixDomain { RawScores, Probabilities };

enum class Mode { Focused, Balanced };

struct AlignConfig {
  double kappa = 0.2;   // core-head peak threshold
  double omega = 0.0;   // smoothing strength; 0 disables the blend
  int start_layer = 1;  // 1-based; layer l is aligned iff l >= start_layer
  MixDomain mix_domain = MixDomain::RawScores;

  void validate(int num_layers) const;
  std::string to_json() const;
  static AlignConfig from_json(const std::string& text);
};

// Per-layer head classification. The three sets are pairwise disjoint and
// cover all head indices; core + global together are the semantic heads.
struct HeadPartition {
  std::vector<int> other_heads;
  std::vector<int> global_semantic_heads;
  std::vector<int> core_semantic_heads;
};

// Classifies heads from one normalized query row. A head is semantic when
// its attention mass past visual_end strictly exceeds the mass on the
// visual span; a semantic head is core when its peak semantic weight
// strictly exceeds kappa times its total semantic mass. Ties fall to
// other / global respectively.
HeadPartition categorize_heads(const AttentionRows& normalized_row,
                               const SequenceLayout& layout, double kappa);

// Two-stage attention alignment of the current query row. Categorization
// always runs on the softmax of the raw scores; blending happens in
// config.mix_domain. Returns rows in that domain (raw stays raw; the
// probabilities mode returns distributions ready for value mixing).
// omega == 0 returns the input unchanged.
AttentionRows align_attention(const AttentionRows& raw_row, const SequenceLayout& layout,
                              const AlignConfig& config);

// Hyperparameter presets. Values are returned verbatim; clamp_to_depth
// adapts them to a shallower model.
AlignConfig preset(Mode mode);
const char* mode_name(Mode mode);

// Clamps start_layer into [1, num_layers + 1]; start_layer == num_layers + 1
// disables alignment. Emits a warning line to `warn` when clamping occurs.
AlignConfig clamp_to_depth(AlignConfig config, int num_layers, std::ostream* warn = nullptr);

// Hook that applies align_attention at every layer >= start_layer.
LayerHook make_alignment_hook(AlignConfig config);

// Simplified lower-layer visual boost: multiplies raw scores at visual key
// positions by a constant factor inside an inclusive layer range.
struct VisualBoostConfig {
  double factor = 1.0;
  int first_layer = 1;  // 1-based, inclusive
  int last_layer = 1;

  void validate(int num_layers) const;
};

AttentionRows boost_visual_attention(const AttentionRows& raw_row,
                                     const SequenceLayout& layout,
                                     const VisualBoostConfig& config);

LayerHook make_visual_boost_hook(VisualBoostConfig config);

}  // namespace sevilab::align
