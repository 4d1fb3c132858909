#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "sevilab/align.hpp"
#include "sevilab/model.hpp"
#include "sevilab/rng.hpp"

namespace sevilab::decode {

enum class Strategy { Greedy, Sample };

struct GenerationConfig {
  int max_new_tokens = 16;
  Strategy strategy = Strategy::Sample;
  double temperature = 1.0;
  double top_p = 1.0;
  std::uint64_t rng_seed = 7;

  void validate() const;
  std::string to_json() const;
  static GenerationConfig from_json(const std::string& text);
};

struct ContrastConfig {
  bool enabled = false;
  std::uint64_t negative_image_seed = 0;
  double jsd_floor = 1e-12;  // clamp before the log
  double alpha_cap = 10.0;
  bool align_negative = false;  // also run the alignment hook on the negative pass

  void validate() const;
  std::string to_json() const;
  static ContrastConfig from_json(const std::string& text);
};

enum class Space { Logits, Probabilities };

// A vocabulary-length vector tagged with its space. The probabilities
// variant must be entrywise nonnegative and sum to 1 within 1e-6.
struct LogitDistribution {
  std::vector<double> values;
  Space space = Space::Logits;

  static LogitDistribution logits(std::vector<double> values);
  static LogitDistribution probabilities(std::vector<double> values);  // validates
  void validate() const;
  // Softmax of a logits variant (temperature 1).
  LogitDistribution to_probabilities() const;
};

// Softmax at the given temperature; the JSD probe always uses temperature 1.
std::vector<double> softmax_probs(std::span<const double> logits, double temperature = 1.0);

// Base-2 Jensen-Shannon divergence between two probability vectors, with the
// 0 * log 0 = 0 convention. Symmetric, in [0, 1].
double jsd(std::span<const double> p, std::span<const double> q);
double jsd(const LogitDistribution& p, const LogitDistribution& q);

// alpha = 1 - log10(max(jsd, floor)), capped at alpha_cap.
double adaptive_alpha(double jsd_value, const ContrastConfig& config);

// (1 + alpha) * pos - alpha * neg, computed as pos + alpha * (pos - neg) so
// that alpha = 0 and pos == neg reproduce pos exactly.
std::vector<double> contrastive_combine(std::span<const double> pos,
                                        std::span<const double> neg, double alpha);
LogitDistribution contrastive_combine(const LogitDistribution& pos,
                                      const LogitDistribution& neg, double alpha);

// Greedy argmax (lowest index wins ties) or temperature + nucleus sampling.
int sample_token(std::span<const double> logits, const GenerationConfig& config, Rng& rng);

struct StepTrace {
  int step = 0;
  int token = 0;
  double jsd = 0.0;
  double alpha = 0.0;
};

struct GenerationResult {
  std::vector<int> tokens;
  std::vector<StepTrace> trace;
};

// Autoregressive generation. Every logits-producing query row of the
// positive pass runs the alignment hook (from start_layer up); when contrast
// is enabled a second pass on a distinct image supplies the negative logits
// and the per-step JSD sets alpha.
GenerationResult generate(const ModelParams& params, const SyntheticImage& image,
                          const std::vector<int>& prompt, const align::AlignConfig& align_cfg,
                          const ContrastConfig& contrast_cfg, const GenerationConfig& gen_cfg);

// JSON lines: {"step":..,"token":..,"jsd":..,"alpha":..,"strategy":".."}.
void write_trace_jsonl(std::ostream& out, const GenerationResult& result,
                       const GenerationConfig& gen_cfg);

const char* strategy_name(Strategy s);

}  // namespace sevilab::decode
