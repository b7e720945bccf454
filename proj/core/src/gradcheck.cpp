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

#include <algorithm>
#include <cmath>

#include "fractal/nn_core.hpp"
#include "fractal/random.hpp"

namespace fractal {

namespace {

struct ParamAddress {
  NodeId node;
  std::string name;
  std::size_t index;
};

}  // namespace

GradcheckReport gradcheck(const ArchGraph& graph, const WeightStore& weights, const Tensor& input,
                          std::span<const int> labels, const EvalContext& ctx,
                          const GradcheckOptions& options) {
  const ForwardPass base = forward(graph, weights, input, ctx);
  const LossResult loss = loss_softmax_xent(base.output(), labels);
  const BackwardResult grads = backward(graph, weights, base, ctx, loss.grad);

  std::vector<ParamAddress> all;
  for (const auto& [id, set] : weights.params) {
    if (ctx.is_frozen(id)) continue;
    for (const auto& [name, t] : set) {
      if (options.exclude_names.count(name) || options.exclude.count({id, name})) continue;
      for (std::size_t i = 0; i < t.size(); ++i) all.push_back({id, name, i});
    }
  }
  Rng rng(mix_seed(options.seed, 0x6763ULL));
  const bool exhaustive = options.sample == 0 || options.sample >= all.size();
  if (!exhaustive) shuffle(all, rng);
  const std::size_t target = exhaustive ? all.size() : options.sample;

  GradcheckReport report;
  WeightStore probe = weights;
  for (const ParamAddress& addr : all) {
    if (report.checked >= target) break;
    Tensor& t = probe.param(addr.node, addr.name);
    const double original = t[addr.index];

    t[addr.index] = original + options.epsilon;
    const ForwardPass plus = forward(graph, probe, input, ctx, {.retain = false});
    const double loss_plus = loss_softmax_xent(plus.output(), labels).loss;
    t[addr.index] = original - options.epsilon;
    const ForwardPass minus = forward(graph, probe, input, ctx, {.retain = false});
    const double loss_minus = loss_softmax_xent(minus.output(), labels).loss;
    t[addr.index] = original;

    GradcheckEntry entry;
    entry.node = addr.node;
    entry.param = addr.name;
    entry.index = addr.index;
    entry.analytic = grads.params.at(addr.node).find(addr.name)->second[addr.index];
    entry.numeric = (loss_plus - loss_minus) / (2.0 * options.epsilon);
    if (plus.switch_signature != base.switch_signature ||
        minus.switch_signature != base.switch_signature) {
      entry.skipped = true;
      ++report.skipped;
    } else {
      const double denom = std::max({std::abs(entry.analytic), std::abs(entry.numeric), 1e-8});
      entry.rel_error = std::abs(entry.analytic - entry.numeric) / denom;
      report.max_rel_error = std::max(report.max_rel_error, entry.rel_error);
      ++report.checked;
    }
    report.entries.push_back(std::move(entry));
  }
  report.pass = report.checked > 0 && report.max_rel_error < options.tolerance;
  return report;
}

}  // namespace fractal
