// Copyright 2026 The Fractal Patterns Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef FRACTAL_TOOLS_IO_HPP_
#define FRACTAL_TOOLS_IO_HPP_

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace fractal::cli {

/// Writes `bytes` to `path` through a sibling temporary file and a rename,
/// so readers see either the old file or the complete new one.
void write_atomic(const std::string& path, std::string_view bytes);
std::string read_file(const std::string& path);

/// Relative output paths resolve against --out-dir, then $FRACTAL_OUT_DIR,
/// then the working directory.
std::string resolve_output(const std::string& path, const std::string& out_dir);

std::uint64_t fnv1a(std::string_view bytes);
std::string hex64(std::uint64_t value);
std::string utc_now();

/// Reproducibility record written next to every artifact.
struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  std::uint64_t seed = 0;
  std::string graph_hash;   // of the canonical graph JSON; empty when no graph
  std::string config_hash;  // of `config`
  nlohmann::json config = nlohmann::json::object();
  std::vector<std::string> outputs;
  std::string started_at;
  std::string finished_at;
  int exit_code = 0;

  nlohmann::json to_json() const;
};

/// Stamps finish time and config hash, then writes `<primary>.manifest.json`.
void write_manifest(RunManifest& manifest, const std::string& primary_output);

}  // namespace fractal::cli

#endif  // FRACTAL_TOOLS_IO_HPP_
