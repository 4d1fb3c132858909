#pragma once

#include <string>

#include "sevilab/manifest.hpp"

namespace sevilab::cli {

// Executes the command recorded in a fully resolved manifest, writing every
// path in manifest.outputs plus the manifest itself (first output path +
// ".manifest.json"). Both fresh runs and --replay go through here, so a
// replayed manifest reproduces the same bytes.
void run_command(const RunManifest& manifest);

std::string manifest_path_for(const std::string& out_path);

// Shared default context: synthetic ids standing in for a short caption
// prompt.
const std::vector<int>& default_prompt();

}  // namespace sevilab::cli
