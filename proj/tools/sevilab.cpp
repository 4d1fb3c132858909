#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "commands.hpp"
#include "sevilab/version.hpp"

namespace {

using namespace sevilab;

ModelConfig resolve_model(const std::string& config_path) {
  if (config_path.empty()) {
    ModelConfig cfg;  // default desk-scale model
    cfg.validate();
    return cfg;
  }
  std::ifstream in(config_path);
  if (!in) throw ConfigError("cannot open config file: " + config_path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return ModelConfig::from_json(buf.str());
}

std::vector<int> parse_prompt(const std::string& csv) {
  if (csv.empty()) return cli::default_prompt();
  std::vector<int> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const int v = std::stoi(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::exception&) {
      throw InputError("malformed --prompt entry: '" + item + "'");
    }
  }
  if (out.empty()) throw InputError("--prompt list is empty");
  return out;
}

// Options shared by every model-driven subcommand.
struct ModelOpts {
  std::string config_path;
  int visual_tokens = 16;
  std::uint64_t image_seed = 1001;
  std::string prompt_csv;
  std::string out;

  void attach(CLI::App* cmd, const std::string& default_out) {
    out = default_out;
    cmd->add_option("--config", config_path, "Model config JSON file");
    cmd->add_option("--visual-tokens", visual_tokens, "Number of visual positions")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--image-seed", image_seed, "Seed of the synthetic image");
    cmd->add_option("--prompt", prompt_csv, "Comma-separated prompt token ids");
    cmd->add_option("--out", out, "Output report path");
  }

  void fill(RunManifest& m) const {
    m.model = resolve_model(config_path);
    m.visual_tokens = visual_tokens;
    m.prompt = parse_prompt(prompt_csv);
    m.seeds["init_seed"] = m.model.init_seed;
    m.seeds["image_seed"] = image_seed;
    m.outputs.push_back(out);
    m.tool_version = kVersion;
  }
};

struct AlignOpts {
  std::string mode;
  double kappa = 0.2;
  double omega = 0.0;
  int start_layer = 1;
  std::string mix_domain = "raw_scores";
  CLI::Option* kappa_opt = nullptr;
  CLI::Option* omega_opt = nullptr;
  CLI::Option* start_opt = nullptr;
  CLI::Option* mix_opt = nullptr;

  void attach(CLI::App* cmd) {
    attach_partition(cmd);
    cmd->add_option("--mode", mode, "Alignment preset: focused or balanced")
        ->check(CLI::IsMember({"focused", "balanced"}));
    omega_opt = cmd->add_option("--omega", omega, "Smoothing strength");
    start_opt = cmd->add_option("--start-layer", start_layer, "First aligned layer (1-based)");
  }

  // The grid sweeps omega and start-layer itself; it only shares the
  // partition knobs.
  void attach_partition(CLI::App* cmd) {
    kappa_opt = cmd->add_option("--kappa", kappa, "Core-head peak threshold");
    mix_opt = cmd->add_option("--mix-domain", mix_domain, "raw_scores or probabilities")
                  ->check(CLI::IsMember({"raw_scores", "probabilities"}));
  }

  // Flag > preset > default. Depth clamping happens at execution time so the
  // manifest keeps the verbatim preset values.
  align::AlignConfig resolve() const {
    align::AlignConfig cfg;
    if (mode == "focused") cfg = align::preset(align::Mode::Focused);
    if (mode == "balanced") cfg = align::preset(align::Mode::Balanced);
    if (kappa_opt && kappa_opt->count() > 0) cfg.kappa = kappa;
    if (omega_opt && omega_opt->count() > 0) cfg.omega = omega;
    if (start_opt && start_opt->count() > 0) cfg.start_layer = start_layer;
    if (mix_opt && mix_opt->count() > 0) {
      cfg.mix_domain = mix_domain == "probabilities" ? align::MixDomain::Probabilities
                                                     : align::MixDomain::RawScores;
    }
    cfg.validate(std::numeric_limits<int>::max() - 1);
    return cfg;
  }
};

struct GenOpts {
  int max_new_tokens = 24;
  bool greedy = false;
  double top_p = 1.0;
  double temperature = 1.0;
  std::uint64_t seed = 7;

  void attach(CLI::App* cmd) {
    cmd->add_option("--max-new-tokens", max_new_tokens, "Tokens to generate")
        ->check(CLI::PositiveNumber);
    cmd->add_flag("--greedy", greedy, "Greedy decoding instead of sampling");
    cmd->add_option("--top-p", top_p, "Nucleus mass");
    cmd->add_option("--temperature", temperature, "Sampling temperature");
    cmd->add_option("--seed", seed, "Sampling RNG seed");
  }

  decode::GenerationConfig resolve() const {
    decode::GenerationConfig cfg;
    cfg.max_new_tokens = max_new_tokens;
    cfg.strategy = greedy ? decode::Strategy::Greedy : decode::Strategy::Sample;
    cfg.top_p = top_p;
    cfg.temperature = temperature;
    cfg.rng_seed = seed;
    cfg.validate();
    return cfg;
  }
};

struct ContrastOpts {
  bool enabled = false;
  std::uint64_t neg_seed = 0;
  double alpha_cap = 10.0;
  double jsd_floor = 1e-12;
  bool align_negative = false;
  CLI::Option* neg_seed_opt = nullptr;

  void attach(CLI::App* cmd) {
    cmd->add_flag("--contrast", enabled, "Enable cross-image contrastive decoding");
    neg_seed_opt = cmd->add_option("--neg-seed", neg_seed, "Negative image seed");
    cmd->add_option("--alpha-cap", alpha_cap, "Upper bound on alpha");
    cmd->add_option("--jsd-floor", jsd_floor, "Lower clamp on JSD before the log");
    cmd->add_flag("--align-negative", align_negative,
                  "Run the alignment hook on the negative pass too");
  }

  decode::ContrastConfig resolve(std::uint64_t image_seed) const {
    decode::ContrastConfig cfg;
    cfg.enabled = enabled;
    cfg.negative_image_seed =
        (neg_seed_opt && neg_seed_opt->count() > 0) ? neg_seed : image_seed + 1;
    cfg.alpha_cap = alpha_cap;
    cfg.jsd_floor = jsd_floor;
    cfg.align_negative = align_negative;
    cfg.validate();
    return cfg;
  }
};

int dispatch(const RunManifest& manifest) {
  cli::run_command(manifest);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attention-alignment laboratory on a deterministic toy multimodal transformer"};
  app.require_subcommand(0, 1);
  std::string replay_path;
  app.add_option("--replay", replay_path, "Re-run a recorded run manifest");

  // analyze-flow
  auto* flow_cmd = app.add_subcommand("analyze-flow", "Attention-rollout flow summary CSV");
  auto flow_model = std::make_shared<ModelOpts>();
  flow_model->attach(flow_cmd, "flow.csv");
  flow_cmd->callback([flow_model] {
    RunManifest m;
    m.command = "analyze-flow";
    flow_model->fill(m);
    cli::run_command(m);
  });

  // probe-mask
  auto* probe_cmd = app.add_subcommand("probe-mask", "Vision-masking JSD probe CSV");
  auto probe_model = std::make_shared<ModelOpts>();
  auto probe_layers = std::make_shared<std::string>();
  probe_model->attach(probe_cmd, "probe.csv");
  probe_cmd->add_option("--mask-layers", *probe_layers,
                        "Comma-separated mask start layers (default: all)");
  probe_cmd->callback([probe_model, probe_layers] {
    RunManifest m;
    m.command = "probe-mask";
    probe_model->fill(m);
    if (probe_layers->empty()) {
      std::string all;
      for (int l = 1; l <= m.model.num_layers + 1; ++l) {
        if (!all.empty()) all += ',';
        all += std::to_string(l);
      }
      m.args["mask_layers"] = all;
    } else {
      m.args["mask_layers"] = *probe_layers;
    }
    cli::run_command(m);
  });

  // stats-peaks
  auto* peaks_cmd = app.add_subcommand("stats-peaks", "Peak semantic-attention ratio CSV");
  auto peaks_model = std::make_shared<ModelOpts>();
  auto peaks_align = std::make_shared<AlignOpts>();
  peaks_model->attach(peaks_cmd, "peaks.csv");
  peaks_align->attach(peaks_cmd);
  peaks_cmd->callback([peaks_model, peaks_align] {
    RunManifest m;
    m.command = "stats-peaks";
    peaks_model->fill(m);
    m.align_cfg = peaks_align->resolve();
    cli::run_command(m);
  });

  // generate
  auto* gen_cmd = app.add_subcommand("generate", "Aligned / contrastive token generation");
  auto gen_model = std::make_shared<ModelOpts>();
  auto gen_align = std::make_shared<AlignOpts>();
  auto gen_gen = std::make_shared<GenOpts>();
  auto gen_contrast = std::make_shared<ContrastOpts>();
  auto gen_dump = std::make_shared<std::string>();
  gen_model->attach(gen_cmd, "trace.jsonl");
  gen_align->attach(gen_cmd);
  gen_gen->attach(gen_cmd);
  gen_contrast->attach(gen_cmd);
  gen_cmd->add_option("--dump-params", *gen_dump,
                      "Base path for a parameter dump (.bin + .json sidecar)");
  gen_cmd->callback([gen_model, gen_align, gen_gen, gen_contrast, gen_dump] {
    RunManifest m;
    m.command = "generate";
    gen_model->fill(m);
    m.align_cfg = gen_align->resolve();
    m.generation = gen_gen->resolve();
    m.contrast = gen_contrast->resolve(gen_model->image_seed);
    m.seeds["rng_seed"] = m.generation->rng_seed;
    if (m.contrast->enabled) m.seeds["negative_image_seed"] = m.contrast->negative_image_seed;
    if (!gen_dump->empty()) {
      m.args["dump_params"] = *gen_dump;
      m.outputs.push_back(*gen_dump + ".bin");
      m.outputs.push_back(*gen_dump + ".json");
    }
    if (!gen_align->mode.empty()) m.args["mode"] = gen_align->mode;
    cli::run_command(m);
  });

  // grid
  auto* grid_cmd = app.add_subcommand("grid", "Composite-score grid over omega x start-layer");
  auto grid_model = std::make_shared<ModelOpts>();
  auto grid_align = std::make_shared<AlignOpts>();
  auto grid_gen = std::make_shared<GenOpts>();
  auto grid_contrast = std::make_shared<ContrastOpts>();
  auto grid_corpus = std::make_shared<std::string>();
  auto grid_omegas = std::make_shared<std::string>("0.5,1,2,4");
  auto grid_layers = std::make_shared<std::string>("2,5,9,17");
  grid_model->attach(grid_cmd, "grid.csv");
  grid_align->attach_partition(grid_cmd);
  grid_gen->attach(grid_cmd);
  grid_contrast->attach(grid_cmd);
  grid_cmd->add_option("corpus", *grid_corpus, "Grid corpus JSONL (ground truth + image seeds)")
      ->required();
  grid_cmd->add_option("--omega", *grid_omegas, "Comma-separated omega values");
  grid_cmd->add_option("--start-layer", *grid_layers, "Comma-separated start layers");
  grid_cmd->callback([grid_model, grid_align, grid_gen, grid_contrast, grid_corpus, grid_omegas,
                      grid_layers] {
    RunManifest m;
    m.command = "grid";
    grid_model->fill(m);
    m.align_cfg = grid_align->resolve();
    m.generation = grid_gen->resolve();
    m.contrast = grid_contrast->resolve(grid_model->image_seed);
    m.seeds["rng_seed"] = m.generation->rng_seed;
    m.args["corpus"] = *grid_corpus;
    m.args["omegas"] = *grid_omegas;
    m.args["start_layers"] = *grid_layers;
    cli::run_command(m);
  });

  // eval-chair / eval-amber / eval-capture
  auto add_eval = [&](const std::string& name, const std::string& desc, const char* first,
                      const char* second) {
    auto* cmd = app.add_subcommand(name, desc);
    auto paths = std::make_shared<std::pair<std::string, std::string>>();
    auto out = std::make_shared<std::string>("report.json");
    auto convention = std::make_shared<std::string>("paper");
    auto pooling = std::make_shared<std::string>("corpus");
    cmd->add_option(first, paths->first, "")->required();
    cmd->add_option(second, paths->second, "")->required();
    cmd->add_option("--out", *out, "Output report path");
    cmd->add_option("--convention", *convention, "chair label convention: paper or original")
        ->check(CLI::IsMember({"paper", "original"}));
    if (name == "eval-chair") {
      cmd->add_option("--pooling", *pooling, "corpus or per_caption")
          ->check(CLI::IsMember({"corpus", "per_caption"}));
    }
    cmd->callback([name, paths, out, convention, pooling, first, second] {
      RunManifest m;
      m.command = name;
      m.tool_version = kVersion;
      m.model = ModelConfig{};  // not used; recorded for schema stability
      m.prompt = cli::default_prompt();
      m.args[first == std::string("predicted") ? "predicted" : "records"] = paths->first;
      m.args[second == std::string("gold") ? "gold" : "truths"] = paths->second;
      m.args["convention"] = *convention;
      if (name == "eval-chair") m.args["pooling"] = *pooling;
      m.outputs.push_back(*out);
      cli::run_command(m);
    });
  };
  add_eval("eval-chair", "CHAIR pair over a caption corpus", "records", "truths");
  add_eval("eval-amber", "AMBER quadruple over a caption corpus", "records", "truths");
  add_eval("eval-capture", "CAPTURE weighted F1 over extraction sets", "predicted", "gold");

  try {
    app.parse(argc, argv);
    if (app.get_subcommands().empty()) {
      if (!replay_path.empty()) {
        return dispatch(sevilab::RunManifest::load(replay_path));
      }
      std::cerr << app.help() << std::flush;
      return 2;
    }
    if (!replay_path.empty()) {
      std::cerr << "error: --replay cannot be combined with a subcommand\n";
      return 2;
    }
    return 0;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const sevilab::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const sevilab::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const sevilab::CapacityError& e) {
    std::cerr << "capacity error: " << e.what() << "\n";
    return 2;
  } catch (const sevilab::InputError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
