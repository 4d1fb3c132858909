#pragma once

#include <array>
#include <set>
#include <string>
#include <vector>

#include "sevilab/errors.hpp"

namespace sevilab::metrics {

// A generated caption reduced to its pre-extracted object mentions.
struct CaptionRecord {
  std::string caption_id;
  std::vector<std::string> objects;                     // lowercase, deduplicated
  std::vector<std::vector<std::string>> sentences;      // per-sentence object lists

  void validate() const;  // sentence objects must appear in `objects`
};

struct GroundTruth {
  std::string caption_id;
  std::set<std::string> annotated_objects;      // A
  std::set<std::string> hallucination_targets;  // H, may be empty

  void validate() const;
};

enum class Pooling { Corpus, PerCaption };
enum class Convention { Paper, Original };

// chairs = hallucinated object mentions / all mentions,
// chairi = sentences with a hallucinated object / all sentences,
// as written here (the original benchmark swaps the two labels; reports
// relabel under Convention::Original). Corpus pooling uses pooled counts;
// PerCaption averages per-caption ratios (captions with zero mentions or
// zero sentences are skipped and counted in the skip fields).
struct ChairResult {
  double chairs = 0.0;
  double chairi = 0.0;
  long hallucinated_mentions = 0;
  long total_mentions = 0;
  long hallucinated_sentences = 0;
  long total_sentences = 0;
  long skipped_captions = 0;  // PerCaption pooling only
};

ChairResult chair_scores(const std::vector<CaptionRecord>& records,
                         const std::vector<GroundTruth>& truths,
                         Pooling pooling = Pooling::Corpus);

// Per-caption chair = 1 - |R' ∩ A| / |R'|, cover = |R' ∩ A| / |A|,
// cog = |R' ∩ H| / |R'|; corpus values are caption means and hal is the
// fraction of captions with chair > 0. Captions with empty R' score 0 for
// chair/cog by convention and are listed in flagged_empty.
struct AmberResult {
  double chair = 0.0;
  double cover = 0.0;
  double hal = 0.0;
  double cog = 0.0;
  std::vector<std::string> flagged_empty;
};

AmberResult amber_scores(const std::vector<CaptionRecord>& records,
                         const std::vector<GroundTruth>& truths);

// F1 over exact set intersection; 1 when both sets are empty, 0 when both
// precision and recall vanish.
double f1_exact(const std::set<std::string>& pred, const std::set<std::string>& gold);

// Weighted mean (5 * f1_obj + 5 * f1_attr + 2 * f1_rel) / 12.
double capture(double f1_obj, double f1_attr, double f1_rel);

struct CompositeResult {
  double r_cs_ci = 0.0;      // R - Cs - Ci
  double two_r_cs_ci = 0.0;  // 2R - Cs - Ci
};

// Inputs are percentages.
CompositeResult composite_scores(double recall, double chairs, double chairi);

using Relation = std::array<std::string, 3>;  // (subject, predicate, object)

struct CaptureRecord {
  std::string caption_id;
  std::set<std::string> entities;
  std::set<std::string> attributes;
  std::set<Relation> relations;
};

struct CaptureResult {
  double f1_obj = 0.0;   // per-caption means
  double f1_attr = 0.0;
  double f1_rel = 0.0;
  double score = 0.0;
};

CaptureResult capture_scores(const std::vector<CaptureRecord>& predicted,
                             const std::vector<CaptureRecord>& gold);

// JSON-lines corpus IO. Object strings are lowercased on load; duplicate
// objects collapse; a sentence object missing from `objects` is an input
// error.
std::vector<CaptionRecord> load_caption_records(const std::string& path);
std::vector<GroundTruth> load_ground_truth(const std::string& path);
std::vector<CaptureRecord> load_capture_records(const std::string& path);

std::string chair_report_json(const ChairResult& result, Convention convention,
                              Pooling pooling);
std::string amber_report_json(const AmberResult& result);
std::string capture_report_json(const CaptureResult& result);

const char* convention_name(Convention c);
const char* pooling_name(Pooling p);

}  // namespace sevilab::metrics
