#include "commands.hpp"

#include <atomic>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "sevilab/decode.hpp"
#include "sevilab/flow.hpp"
#include "sevilab/metrics.hpp"
#include "sevilab/model.hpp"

namespace sevilab::cli {

namespace {

std::uint64_t seed_of(const RunManifest& m, const std::string& name, std::uint64_t fallback) {
  const auto it = m.seeds.find(name);
  return it == m.seeds.end() ? fallback : it->second;
}

const std::string& arg_of(const RunManifest& m, const std::string& name) {
  const auto it = m.args.find(name);
  if (it == m.args.end()) throw InputError("manifest is missing argument: " + name);
  return it->second;
}

std::vector<int> parse_int_list(const std::string& text, const std::string& what) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const int v = std::stoi(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::exception&) {
      throw InputError("malformed " + what + " entry: '" + item + "'");
    }
  }
  if (out.empty()) throw InputError(what + " list is empty");
  return out;
}

std::vector<double> parse_double_list(const std::string& text, const std::string& what) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const double v = std::stod(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::exception&) {
      throw InputError("malformed " + what + " entry: '" + item + "'");
    }
  }
  if (out.empty()) throw InputError(what + " list is empty");
  return out;
}

std::ofstream open_output(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write output file: " + path);
  return out;
}

struct Context {
  ModelParams params;
  SyntheticImage image;
  std::vector<Session::Input> inputs;  // visual embeddings + full prompt
  int visual_end = 0;
  int prompt_end = 0;
};

Context build_context(const RunManifest& m) {
  Context ctx{init_model(m.model), {}, {}, 0, 0};
  const std::uint64_t image_seed = seed_of(m, "image_seed", 1001);
  ctx.image = SyntheticImage::random(m.visual_tokens, m.model.model_dim, image_seed);
  if (m.prompt.empty()) throw InputError("prompt must not be empty");

  const auto embeds = encode_image(ctx.image, ctx.params);
  for (const auto& e : embeds) ctx.inputs.push_back(Session::Input::embedding(e));
  for (int t : m.prompt) ctx.inputs.push_back(Session::Input::token(t));
  ctx.visual_end = m.visual_tokens - 1;
  ctx.prompt_end = m.visual_tokens + static_cast<int>(m.prompt.size()) - 1;
  return ctx;
}

void save_manifest(const RunManifest& m) {
  if (m.outputs.empty()) throw InputError("manifest has no outputs");
  m.save(manifest_path_for(m.outputs.front()));
}

void run_analyze_flow(const RunManifest& m) {
  Context ctx = build_context(m);
  Session session(ctx.params, ctx.visual_end, ctx.prompt_end);
  const PrefillResult pre = session.prefill(ctx.inputs);
  const auto summaries = flow::compute_flow(pre.attention, session.layout());

  auto out = open_output(m.outputs.at(0));
  flow::write_flow_csv(out, summaries);
  save_manifest(m);
}

void run_probe_mask(const RunManifest& m) {
  const std::vector<int> layers = parse_int_list(arg_of(m, "mask_layers"), "mask-layers");
  Context ctx = build_context(m);

  std::vector<flow::MaskProbeResult> results;
  results.reserve(layers.size());
  for (int l : layers) {
    results.push_back(flow::vision_mask_probe(ctx.params, ctx.image, m.prompt, l));
  }

  auto out = open_output(m.outputs.at(0));
  flow::write_probe_csv(out, results);
  save_manifest(m);
}

void run_stats_peaks(const RunManifest& m) {
  if (!m.align_cfg) throw InputError("stats-peaks manifest requires an align config");
  Context ctx = build_context(m);
  Session session(ctx.params, ctx.visual_end, ctx.prompt_end);
  const PrefillResult pre = session.prefill(ctx.inputs);
  const auto stats =
      flow::peak_attention_stats(pre.attention, session.layout(), m.align_cfg->kappa);

  auto out = open_output(m.outputs.at(0));
  flow::write_stats_csv(out, stats);
  save_manifest(m);
}

void run_generate(const RunManifest& m) {
  if (!m.align_cfg || !m.contrast || !m.generation) {
    throw InputError("generate manifest requires align, contrast and generation configs");
  }
  Context ctx = build_context(m);

  // The manifest keeps verbatim preset values; depth clamping is an
  // execution-time concern.
  const align::AlignConfig exec_align =
      align::clamp_to_depth(*m.align_cfg, m.model.num_layers, &std::cerr);
  const decode::GenerationResult result = decode::generate(
      ctx.params, ctx.image, m.prompt, exec_align, *m.contrast, *m.generation);

  auto out = open_output(m.outputs.at(0));
  decode::write_trace_jsonl(out, result, *m.generation);

  if (m.args.count("dump_params")) {
    const std::string base = m.args.at("dump_params");
    dump_parameters(ctx.params, base + ".bin", base + ".json");
  }
  save_manifest(m);

  for (std::size_t i = 0; i < result.tokens.size(); ++i) {
    std::cout << (i ? " " : "") << result.tokens[i];
  }
  std::cout << "\n";
}

struct GridRecord {
  std::string caption_id;
  std::uint64_t image_seed = 0;
  metrics::GroundTruth truth;
};

std::vector<GridRecord> load_grid_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open grid corpus: " + path);
  std::vector<GridRecord> records;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      GridRecord r;
      r.caption_id = j.at("caption_id").get<std::string>();
      r.image_seed = j.at("image_seed").get<std::uint64_t>();
      r.truth.caption_id = r.caption_id;
      for (const auto& obj : j.at("annotated_objects")) {
        r.truth.annotated_objects.insert(obj.get<std::string>());
      }
      r.truth.validate();
      records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw InputError(path + ":" + std::to_string(lineno) + ": bad grid record: " + e.what());
    }
  }
  if (records.empty()) throw InputError("grid corpus is empty: " + path);
  return records;
}

// Generated tokens become synthetic object mentions; fixed-size chunks act
// as sentences.
metrics::CaptionRecord caption_from_tokens(const std::string& caption_id,
                                           const std::vector<int>& tokens) {
  constexpr int kSentenceLen = 8;
  metrics::CaptionRecord rec;
  rec.caption_id = caption_id;
  std::set<std::string> seen;
  for (int t : tokens) {
    std::string name = "tok" + std::to_string(t);
    if (seen.insert(name).second) rec.objects.push_back(std::move(name));
  }
  for (std::size_t start = 0; start < tokens.size(); start += kSentenceLen) {
    std::vector<std::string> sentence;
    std::set<std::string> in_sentence;
    for (std::size_t i = start; i < std::min(tokens.size(), start + kSentenceLen); ++i) {
      std::string name = "tok" + std::to_string(tokens[i]);
      if (in_sentence.insert(name).second) sentence.push_back(std::move(name));
    }
    rec.sentences.push_back(std::move(sentence));
  }
  return rec;
}

int thread_budget(std::size_t jobs) {
  unsigned n = std::thread::hardware_concurrency();
  if (n == 0) n = 1;
  if (const char* env = std::getenv("SEVI_LAB_THREADS")) {
    try {
      const int cap = std::stoi(env);
      if (cap >= 1) n = std::min(n, static_cast<unsigned>(cap));
    } catch (const std::exception&) {
      throw InputError("SEVI_LAB_THREADS must be a positive integer");
    }
  }
  return static_cast<int>(std::min<std::size_t>(n, jobs));
}

struct GridCell {
  double omega = 0.0;
  int start_layer = 1;
  double chairs_pct = 0.0;
  double chairi_pct = 0.0;
  double recall_pct = 0.0;
  metrics::CompositeResult composite;
};

void run_grid(const RunManifest& m) {
  if (!m.align_cfg || !m.contrast || !m.generation) {
    throw InputError("grid manifest requires align, contrast and generation configs");
  }
  const std::vector<double> omegas = parse_double_list(arg_of(m, "omegas"), "omega");
  const std::vector<int> start_layers =
      parse_int_list(arg_of(m, "start_layers"), "start-layer");
  const std::vector<GridRecord> corpus = load_grid_corpus(arg_of(m, "corpus"));

  const ModelParams params = init_model(m.model);

  std::vector<GridCell> cells;
  for (double omega : omegas) {
    for (int sl : start_layers) cells.push_back({omega, sl, 0, 0, 0, {}});
  }

  std::vector<metrics::GroundTruth> truths;
  truths.reserve(corpus.size());
  for (const auto& r : corpus) truths.push_back(r.truth);

  auto eval_cell = [&](GridCell& cell) {
    align::AlignConfig align_cfg = *m.align_cfg;
    align_cfg.omega = cell.omega;
    align_cfg.start_layer = cell.start_layer;
    align_cfg = align::clamp_to_depth(align_cfg, m.model.num_layers);

    std::vector<metrics::CaptionRecord> captions;
    captions.reserve(corpus.size());
    long recall_hit = 0, recall_total = 0;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      const GridRecord& rec = corpus[i];
      const SyntheticImage image =
          SyntheticImage::random(m.visual_tokens, m.model.model_dim, rec.image_seed);
      decode::GenerationConfig gen = *m.generation;
      gen.rng_seed = m.generation->rng_seed + i;  // per-record stream
      const decode::GenerationResult result =
          decode::generate(params, image, m.prompt, align_cfg, *m.contrast, gen);

      metrics::CaptionRecord caption = caption_from_tokens(rec.caption_id, result.tokens);
      for (const auto& obj : caption.objects) {
        if (rec.truth.annotated_objects.count(obj)) ++recall_hit;
      }
      recall_total += static_cast<long>(rec.truth.annotated_objects.size());
      captions.push_back(std::move(caption));
    }

    const metrics::ChairResult chair =
        metrics::chair_scores(captions, truths, metrics::Pooling::Corpus);
    cell.chairs_pct = 100.0 * chair.chairs;
    cell.chairi_pct = 100.0 * chair.chairi;
    cell.recall_pct = recall_total == 0 ? 0.0 : 100.0 * recall_hit / recall_total;
    cell.composite =
        metrics::composite_scores(cell.recall_pct, cell.chairs_pct, cell.chairi_pct);
  };

  const int workers = thread_budget(cells.size());
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = next.fetch_add(1); i < cells.size(); i = next.fetch_add(1)) {
          eval_cell(cells[i]);
        }
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (const auto& err : errors) {
    if (err) std::rethrow_exception(err);
  }

  auto out = open_output(m.outputs.at(0));
  out << "omega,start_layer,chairs,chairi,recall,r_cs_ci,two_r_cs_ci\n";
  for (const auto& c : cells) {
    out << format_real(c.omega) << ',' << c.start_layer << ',' << format_real(c.chairs_pct)
        << ',' << format_real(c.chairi_pct) << ',' << format_real(c.recall_pct) << ','
        << format_real(c.composite.r_cs_ci) << ',' << format_real(c.composite.two_r_cs_ci)
        << '\n';
  }
  save_manifest(m);
}

metrics::Convention convention_of(const RunManifest& m) {
  const auto it = m.args.find("convention");
  if (it == m.args.end() || it->second == "paper") return metrics::Convention::Paper;
  if (it->second == "original") return metrics::Convention::Original;
  throw InputError("convention must be paper or original");
}

void run_eval_chair(const RunManifest& m) {
  const auto records = metrics::load_caption_records(arg_of(m, "records"));
  const auto truths = metrics::load_ground_truth(arg_of(m, "truths"));
  metrics::Pooling pooling = metrics::Pooling::Corpus;
  if (const auto it = m.args.find("pooling"); it != m.args.end()) {
    if (it->second == "per_caption") {
      pooling = metrics::Pooling::PerCaption;
    } else if (it->second != "corpus") {
      throw InputError("pooling must be corpus or per_caption");
    }
  }
  const auto result = metrics::chair_scores(records, truths, pooling);
  auto out = open_output(m.outputs.at(0));
  out << metrics::chair_report_json(result, convention_of(m), pooling) << "\n";
  save_manifest(m);
}

void run_eval_amber(const RunManifest& m) {
  const auto records = metrics::load_caption_records(arg_of(m, "records"));
  const auto truths = metrics::load_ground_truth(arg_of(m, "truths"));
  const auto result = metrics::amber_scores(records, truths);
  auto out = open_output(m.outputs.at(0));
  out << metrics::amber_report_json(result) << "\n";
  save_manifest(m);
}

void run_eval_capture(const RunManifest& m) {
  const auto pred = metrics::load_capture_records(arg_of(m, "predicted"));
  const auto gold = metrics::load_capture_records(arg_of(m, "gold"));
  const auto result = metrics::capture_scores(pred, gold);
  auto out = open_output(m.outputs.at(0));
  out << metrics::capture_report_json(result) << "\n";
  save_manifest(m);
}

}  // namespace

std::string manifest_path_for(const std::string& out_path) {
  return out_path + ".manifest.json";
}

const std::vector<int>& default_prompt() {
  // Synthetic ids standing in for "the image depicts a".
  static const std::vector<int> prompt = {2, 45, 89, 13, 7};
  return prompt;
}

void run_command(const RunManifest& manifest) {
  if (manifest.command == "analyze-flow") {
    run_analyze_flow(manifest);
  } else if (manifest.command == "probe-mask") {
    run_probe_mask(manifest);
  } else if (manifest.command == "stats-peaks") {
    run_stats_peaks(manifest);
  } else if (manifest.command == "generate") {
    run_generate(manifest);
  } else if (manifest.command == "grid") {
    run_grid(manifest);
  } else if (manifest.command == "eval-chair") {
    run_eval_chair(manifest);
  } else if (manifest.command == "eval-amber") {
    run_eval_amber(manifest);
  } else if (manifest.command == "eval-capture") {
    run_eval_capture(manifest);
  } else {
    throw InputError("unknown command: " + manifest.command);
  }
}

}  // namespace sevilab::cli
