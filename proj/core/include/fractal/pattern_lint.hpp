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

#ifndef FRACTAL_PATTERN_LINT_HPP_
#define FRACTAL_PATTERN_LINT_HPP_

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fractal/graph_ir.hpp"

namespace fractal {

enum class PatternStatus { kPass, kFail, kAdvisory };
enum class Severity { kError, kWarning, kInfo };

std::string_view status_name(PatternStatus status);
std::string_view severity_name(Severity severity);

struct PatternEntry {
  int id = 0;
  std::string name;
  PatternStatus status = PatternStatus::kAdvisory;
  Severity severity = Severity::kInfo;
  std::string metric_name;
  double metric = 0.0;
  std::string metric_text;  // exact form when the metric does not fit a double (path counts)
  std::vector<NodeId> locations;
  std::string message;
};

struct PatternReport {
  std::string graph_name;
  std::vector<PatternEntry> entries;  // ids 1..14 in order

  const PatternEntry& entry(int id) const;
  /// No failing rule of error severity.
  bool ok() const;
  /// Ids of failing rules (any severity).
  std::vector<int> failing() const;
};

struct LintThresholds {
  long min_paths = 2;
  int max_bypass = 64;  // bypass lengths at or above this fail
};

/// Optional training facts for the advisory training-procedure patterns.
struct LintTrainingInfo {
  double drop_path_rate = 0.0;
  int iterations = 0;
  bool horizontal_flip = false;
};

/// Checks `graph` (which must validate) against the quantifiable patterns.
/// Pure: the same inputs give a byte-identical report.
PatternReport lint(const ArchGraph& graph, const LintThresholds& thresholds = {},
                   const std::optional<LintTrainingInfo>& training = std::nullopt);

std::string report_json(const PatternReport& report);
std::string report_text(const PatternReport& report);

}  // namespace fractal

#endif  // FRACTAL_PATTERN_LINT_HPP_
