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

#ifndef FRACTAL_TOOLS_PLOT_HPP_
#define FRACTAL_TOOLS_PLOT_HPP_

#include <string>
#include <vector>

#include "fractal/trainer.hpp"

namespace fractal::cli {

struct Series {
  std::string label;
  std::vector<HistoryPoint> points;
};

/// Test accuracy against iteration, one polyline per series, with axes,
/// gridlines and a legend.
std::string accuracy_svg(const std::vector<Series>& series, const std::string& title);

}  // namespace fractal::cli

#endif  // FRACTAL_TOOLS_PLOT_HPP_
