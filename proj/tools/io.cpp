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

#include "io.hpp"

#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#ifndef FRACTAL_TOOL_VERSION
#define FRACTAL_TOOL_VERSION "unknown"
#endif

namespace fractal::cli {

namespace fs = std::filesystem;

void write_atomic(const std::string& path, std::string_view bytes) {
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      out.close();
      fs::remove(tmp);
      throw std::runtime_error("write failed for " + tmp.string());
    }
  }
  fs::rename(tmp, target);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string resolve_output(const std::string& path, const std::string& out_dir) {
  const fs::path p(path);
  if (p.is_absolute()) return path;
  if (!out_dir.empty()) return (fs::path(out_dir) / p).string();
  if (const char* env = std::getenv("FRACTAL_OUT_DIR"); env && *env) {
    return (fs::path(env) / p).string();
  }
  return path;
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

nlohmann::json RunManifest::to_json() const {
  nlohmann::json j;
  j["command"] = command;
  j["argv"] = argv;
  j["seed"] = seed;
  j["graph_hash"] = graph_hash;
  j["config_hash"] = config_hash;
  j["config"] = config;
  j["outputs"] = outputs;
  j["tool_version"] = FRACTAL_TOOL_VERSION;
  j["started_at"] = started_at;
  j["finished_at"] = finished_at;
  j["exit_code"] = exit_code;
  return j;
}

void write_manifest(RunManifest& manifest, const std::string& primary_output) {
  manifest.finished_at = utc_now();
  manifest.config_hash = hex64(fnv1a(manifest.config.dump()));
  write_atomic(primary_output + ".manifest.json", manifest.to_json().dump(2) + "\n");
}

}  // namespace fractal::cli
