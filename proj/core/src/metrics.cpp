#include "sevilab/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

namespace sevilab::metrics {

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

template <typename T>
std::size_t intersection_size(const std::set<T>& a, const std::set<T>& b) {
  std::size_t n = 0;
  for (const auto& v : a) {
    if (b.count(v)) ++n;
  }
  return n;
}

template <typename T>
double f1_sets(const std::set<T>& pred, const std::set<T>& gold) {
  if (pred.empty() && gold.empty()) return 1.0;
  const double inter = static_cast<double>(intersection_size(pred, gold));
  const double precision = pred.empty() ? 0.0 : inter / static_cast<double>(pred.size());
  const double recall = gold.empty() ? 0.0 : inter / static_cast<double>(gold.size());
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

// One truth per record, by caption_id.
std::map<std::string, const GroundTruth*> pair_up(const std::vector<CaptionRecord>& records,
                                                  const std::vector<GroundTruth>& truths) {
  if (records.size() != truths.size()) {
    throw InputError("caption records and ground truth differ in size");
  }
  std::map<std::string, const GroundTruth*> by_id;
  for (const auto& t : truths) {
    if (!by_id.emplace(t.caption_id, &t).second) {
      throw InputError("duplicate ground-truth caption_id: " + t.caption_id);
    }
  }
  std::set<std::string> seen;
  for (const auto& r : records) {
    if (!seen.insert(r.caption_id).second) {
      throw InputError("duplicate caption_id in records: " + r.caption_id);
    }
    if (!by_id.count(r.caption_id)) {
      throw InputError("no ground truth for caption_id: " + r.caption_id);
    }
  }
  return by_id;
}

}  // namespace

void CaptionRecord::validate() const {
  std::set<std::string> known(objects.begin(), objects.end());
  if (known.size() != objects.size()) {
    throw InputError("caption " + caption_id + " has duplicate objects");
  }
  for (const auto& sentence : sentences) {
    for (const auto& obj : sentence) {
      if (!known.count(obj)) {
        throw InputError("caption " + caption_id + " sentence mentions unknown object: " + obj);
      }
    }
  }
}

void GroundTruth::validate() const {
  if (annotated_objects.empty()) {
    throw InputError("ground truth " + caption_id + " has no annotated objects");
  }
}

ChairResult chair_scores(const std::vector<CaptionRecord>& records,
                         const std::vector<GroundTruth>& truths, Pooling pooling) {
  const auto by_id = pair_up(records, truths);

  ChairResult result;
  double obj_rate_sum = 0.0, sent_rate_sum = 0.0;
  long obj_captions = 0, sent_captions = 0;

  for (const auto& record : records) {
    const GroundTruth& truth = *by_id.at(record.caption_id);

    long mentions = static_cast<long>(record.objects.size());
    long hallucinated = 0;
    for (const auto& obj : record.objects) {
      if (!truth.annotated_objects.count(obj)) ++hallucinated;
    }

    long sentences = static_cast<long>(record.sentences.size());
    long bad_sentences = 0;
    for (const auto& sentence : record.sentences) {
      for (const auto& obj : sentence) {
        if (!truth.annotated_objects.count(obj)) {
          ++bad_sentences;
          break;
        }
      }
    }

    result.total_mentions += mentions;
    result.hallucinated_mentions += hallucinated;
    result.total_sentences += sentences;
    result.hallucinated_sentences += bad_sentences;

    if (pooling == Pooling::PerCaption) {
      bool skipped = false;
      if (mentions > 0) {
        obj_rate_sum += static_cast<double>(hallucinated) / mentions;
        ++obj_captions;
      } else {
        skipped = true;
      }
      if (sentences > 0) {
        sent_rate_sum += static_cast<double>(bad_sentences) / sentences;
        ++sent_captions;
      } else {
        skipped = true;
      }
      if (skipped) ++result.skipped_captions;
    }
  }

  if (pooling == Pooling::Corpus) {
    if (result.total_mentions == 0) throw UndefinedMetricError("no object mentions in corpus");
    if (result.total_sentences == 0) throw UndefinedMetricError("no sentences in corpus");
    result.chairs = static_cast<double>(result.hallucinated_mentions) / result.total_mentions;
    result.chairi = static_cast<double>(result.hallucinated_sentences) / result.total_sentences;
  } else {
    if (obj_captions == 0) throw UndefinedMetricError("no caption has object mentions");
    if (sent_captions == 0) throw UndefinedMetricError("no caption has sentences");
    result.chairs = obj_rate_sum / obj_captions;
    result.chairi = sent_rate_sum / sent_captions;
  }
  return result;
}

AmberResult amber_scores(const std::vector<CaptionRecord>& records,
                         const std::vector<GroundTruth>& truths) {
  const auto by_id = pair_up(records, truths);
  if (records.empty()) throw UndefinedMetricError("empty corpus");

  AmberResult result;
  for (const auto& record : records) {
    const GroundTruth& truth = *by_id.at(record.caption_id);
    truth.validate();

    const std::set<std::string> generated(record.objects.begin(), record.objects.end());
    const double inter_a =
        static_cast<double>(intersection_size(generated, truth.annotated_objects));
    const double inter_h =
        static_cast<double>(intersection_size(generated, truth.hallucination_targets));

    double chair = 0.0, cog = 0.0;
    if (generated.empty()) {
      result.flagged_empty.push_back(record.caption_id);
    } else {
      chair = 1.0 - inter_a / static_cast<double>(generated.size());
      cog = inter_h / static_cast<double>(generated.size());
    }
    const double cover = inter_a / static_cast<double>(truth.annotated_objects.size());

    result.chair += chair;
    result.cover += cover;
    result.cog += cog;
    if (chair > 0.0) result.hal += 1.0;
  }

  const double n = static_cast<double>(records.size());
  result.chair /= n;
  result.cover /= n;
  result.cog /= n;
  result.hal /= n;
  return result;
}

double f1_exact(const std::set<std::string>& pred, const std::set<std::string>& gold) {
  return f1_sets(pred, gold);
}

double capture(double f1_obj, double f1_attr, double f1_rel) {
  for (double v : {f1_obj, f1_attr, f1_rel}) {
    if (!(v >= 0.0 && v <= 1.0)) throw InputError("capture inputs must lie in [0, 1]");
  }
  return (5.0 * f1_obj + 5.0 * f1_attr + 2.0 * f1_rel) / 12.0;
}

CompositeResult composite_scores(double recall, double chairs, double chairi) {
  CompositeResult r;
  r.r_cs_ci = recall - chairs - chairi;
  r.two_r_cs_ci = 2.0 * recall - chairs - chairi;
  return r;
}

CaptureResult capture_scores(const std::vector<CaptureRecord>& predicted,
                             const std::vector<CaptureRecord>& gold) {
  if (predicted.size() != gold.size()) {
    throw InputError("capture corpora differ in size");
  }
  if (predicted.empty()) throw UndefinedMetricError("empty capture corpus");

  std::map<std::string, const CaptureRecord*> gold_by_id;
  for (const auto& g : gold) {
    if (!gold_by_id.emplace(g.caption_id, &g).second) {
      throw InputError("duplicate gold caption_id: " + g.caption_id);
    }
  }

  CaptureResult result;
  for (const auto& p : predicted) {
    const auto it = gold_by_id.find(p.caption_id);
    if (it == gold_by_id.end()) {
      throw InputError("no gold capture record for caption_id: " + p.caption_id);
    }
    const CaptureRecord& g = *it->second;
    result.f1_obj += f1_sets(p.entities, g.entities);
    result.f1_attr += f1_sets(p.attributes, g.attributes);
    result.f1_rel += f1_sets(p.relations, g.relations);
  }
  const double n = static_cast<double>(predicted.size());
  result.f1_obj /= n;
  result.f1_attr /= n;
  result.f1_rel /= n;
  result.score = capture(result.f1_obj, result.f1_attr, result.f1_rel);
  return result;
}

namespace {

std::vector<nlohmann::json> read_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open corpus file: " + path);
  std::vector<nlohmann::json> lines;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      lines.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw InputError(path + ":" + std::to_string(lineno) + ": bad JSON: " + e.what());
    }
  }
  return lines;
}

std::vector<std::string> lower_list(const nlohmann::json& arr) {
  std::vector<std::string> out;
  for (const auto& v : arr) out.push_back(lower(v.get<std::string>()));
  return out;
}

}  // namespace

std::vector<CaptionRecord> load_caption_records(const std::string& path) {
  std::vector<CaptionRecord> records;
  for (const auto& j : read_jsonl(path)) {
    try {
      CaptionRecord r;
      r.caption_id = j.at("caption_id").get<std::string>();
      // Lowercase and deduplicate, preserving first occurrence.
      std::set<std::string> seen;
      for (auto& obj : lower_list(j.at("objects"))) {
        if (seen.insert(obj).second) r.objects.push_back(obj);
      }
      if (j.contains("sentences")) {
        for (const auto& s : j.at("sentences")) r.sentences.push_back(lower_list(s));
      }
      r.validate();
      records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw InputError(path + ": bad caption record: " + std::string(e.what()));
    }
  }
  return records;
}

std::vector<GroundTruth> load_ground_truth(const std::string& path) {
  std::vector<GroundTruth> truths;
  for (const auto& j : read_jsonl(path)) {
    try {
      GroundTruth t;
      t.caption_id = j.at("caption_id").get<std::string>();
      for (auto& obj : lower_list(j.at("annotated_objects"))) t.annotated_objects.insert(obj);
      if (j.contains("hallucination_targets")) {
        for (auto& obj : lower_list(j.at("hallucination_targets"))) {
          t.hallucination_targets.insert(obj);
        }
      }
      t.validate();
      truths.push_back(std::move(t));
    } catch (const nlohmann::json::exception& e) {
      throw InputError(path + ": bad ground truth record: " + std::string(e.what()));
    }
  }
  return truths;
}

std::vector<CaptureRecord> load_capture_records(const std::string& path) {
  std::vector<CaptureRecord> records;
  for (const auto& j : read_jsonl(path)) {
    try {
      CaptureRecord r;
      r.caption_id = j.at("caption_id").get<std::string>();
      if (j.contains("entities")) {
        for (auto& v : lower_list(j.at("entities"))) r.entities.insert(v);
      }
      if (j.contains("attributes")) {
        for (auto& v : lower_list(j.at("attributes"))) r.attributes.insert(v);
      }
      if (j.contains("relations")) {
        for (const auto& rel : j.at("relations")) {
          if (!rel.is_array() || rel.size() != 3) {
            throw InputError(path + ": relation must be a [subject, predicate, object] triple");
          }
          r.relations.insert(Relation{lower(rel[0].get<std::string>()),
                                      lower(rel[1].get<std::string>()),
                                      lower(rel[2].get<std::string>())});
        }
      }
      records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw InputError(path + ": bad capture record: " + std::string(e.what()));
    }
  }
  return records;
}

std::string chair_report_json(const ChairResult& result, Convention convention, Pooling pooling) {
  nlohmann::json j;
  j["metric"] = "chair";
  j["convention"] = convention_name(convention);
  j["pooling"] = pooling_name(pooling);
  j["object_fraction"] = result.chairs;
  j["sentence_fraction"] = result.chairi;
  if (convention == Convention::Paper) {
    j["chairs"] = result.chairs;
    j["chairi"] = result.chairi;
  } else {
    // The original benchmark labels the sentence fraction CHAIRs and the
    // per-object fraction CHAIRi.
    j["chairs"] = result.chairi;
    j["chairi"] = result.chairs;
  }
  j["hallucinated_mentions"] = result.hallucinated_mentions;
  j["total_mentions"] = result.total_mentions;
  j["hallucinated_sentences"] = result.hallucinated_sentences;
  j["total_sentences"] = result.total_sentences;
  if (pooling == Pooling::PerCaption) j["skipped_captions"] = result.skipped_captions;
  return j.dump(2);
}

std::string amber_report_json(const AmberResult& result) {
  nlohmann::json j;
  j["metric"] = "amber";
  j["chair"] = result.chair;
  j["cover"] = result.cover;
  j["hal"] = result.hal;
  j["cog"] = result.cog;
  j["flagged_empty"] = result.flagged_empty;
  return j.dump(2);
}

std::string capture_report_json(const CaptureResult& result) {
  nlohmann::json j;
  j["metric"] = "capture";
  j["f1_obj"] = result.f1_obj;
  j["f1_attr"] = result.f1_attr;
  j["f1_rel"] = result.f1_rel;
  j["score"] = result.score;
  return j.dump(2);
}

const char* convention_name(Convention c) { return c == Convention::Paper ? "paper" : "original"; }
const char* pooling_name(Pooling p) { return p == Pooling::Corpus ? "corpus" : "per_caption"; }

}  // namespace sevilab::metrics
