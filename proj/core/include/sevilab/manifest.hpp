#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sevilab/align.hpp"
#include "sevilab/decode.hpp"
#include "sevilab/types.hpp"

namespace sevilab {

// Everything a command needs to reproduce its outputs byte-for-byte:
// resolved configs, every seed, and the output paths. Serialized next to
// each report; replaying a manifest re-runs the recorded command.
struct RunManifest {
  std::string command;
  std::string tool_version;
  ModelConfig model;
  int visual_tokens = 16;
  std::vector<int> prompt;
  std::optional<align::AlignConfig> align_cfg;
  std::optional<decode::ContrastConfig> contrast;
  std::optional<decode::GenerationConfig> generation;
  std::map<std::string, std::uint64_t> seeds;
  std::map<std::string, std::string> args;  // command-specific extras
  std::vector<std::string> outputs;

  std::string to_json() const;
  static RunManifest from_json(const std::string& text);
  static RunManifest load(const std::string& path);
  void save(const std::string& path) const;
};

}  // namespace sevilab
