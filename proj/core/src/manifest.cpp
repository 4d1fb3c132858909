#include "sevilab/manifest.hpp"

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace sevilab {

std::string RunManifest::to_json() const {
  nlohmann::json j;
  j["command"] = command;
  j["tool_version"] = tool_version;

  nlohmann::json cfg;
  cfg["model"] = nlohmann::json::parse(model.to_json());
  cfg["visual_tokens"] = visual_tokens;
  cfg["prompt"] = prompt;
  if (align_cfg) cfg["align"] = nlohmann::json::parse(align_cfg->to_json());
  if (contrast) cfg["contrast"] = nlohmann::json::parse(contrast->to_json());
  if (generation) cfg["generation"] = nlohmann::json::parse(generation->to_json());
  j["config"] = cfg;

  j["seeds"] = seeds;
  j["args"] = args;
  j["outputs"] = outputs;
  return j.dump(2);
}

RunManifest RunManifest::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("manifest is not valid JSON: ") + e.what());
  }
  RunManifest m;
  try {
    m.command = j.at("command").get<std::string>();
    m.tool_version = j.at("tool_version").get<std::string>();
    const auto& cfg = j.at("config");
    m.model = ModelConfig::from_json(cfg.at("model").dump());
    m.visual_tokens = cfg.at("visual_tokens").get<int>();
    m.prompt = cfg.at("prompt").get<std::vector<int>>();
    if (cfg.contains("align")) {
      m.align_cfg = align::AlignConfig::from_json(cfg.at("align").dump());
    }
    if (cfg.contains("contrast")) {
      m.contrast = decode::ContrastConfig::from_json(cfg.at("contrast").dump());
    }
    if (cfg.contains("generation")) {
      m.generation = decode::GenerationConfig::from_json(cfg.at("generation").dump());
    }
    if (j.contains("seeds")) {
      m.seeds = j.at("seeds").get<std::map<std::string, std::uint64_t>>();
    }
    if (j.contains("args")) {
      m.args = j.at("args").get<std::map<std::string, std::string>>();
    }
    if (j.contains("outputs")) {
      m.outputs = j.at("outputs").get<std::vector<std::string>>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("bad manifest field: ") + e.what());
  }
  return m;
}

RunManifest RunManifest::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open manifest: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_json(buf.str());
}

void RunManifest::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write manifest: " + path);
  out << to_json() << "\n";
}

}  // namespace sevilab
