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
#include <set>

#include "fractal/trainer.hpp"

namespace fractal {

namespace {

std::vector<std::int64_t> integer_weights(const FreezeDropPathConfig& config) {
  std::vector<std::int64_t> w;
  for (int b = 0; b < config.branch_count; ++b) {
    w.push_back(config.interval == FdpInterval::kSquare ? std::int64_t{b + 1} * (b + 1) : 1);
  }
  return w;
}

std::set<NodeId> ancestors(const ArchGraph& graph, NodeId from) {
  std::set<NodeId> seen{from};
  std::vector<NodeId> stack{from};
  while (!stack.empty()) {
    const NodeId n = stack.back();
    stack.pop_back();
    for (NodeId src : graph.inputs(n)) {
      if (seen.insert(src).second) stack.push_back(src);
    }
  }
  return seen;
}

}  // namespace

DropPathMask sample_drop_path(const ArchGraph& graph, double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw TrainError("drop-path rate must lie in [0,1)");
  DropPathMask mask;
  for (const auto& [id, kind] : graph.nodes()) {
    if (!is_join(kind, JoinKind::kMean)) continue;
    const std::size_t k = graph.inputs(id).size();
    std::vector<bool> alive(k, true);
    bool any = false;
    for (std::size_t b = 0; b < k; ++b) {
      alive[b] = !rng.bernoulli(rate);
      any = any || alive[b];
    }
    if (!any) alive[static_cast<std::size_t>(rng.below(k))] = true;
    mask.emplace(id, std::move(alive));
  }
  return mask;
}

std::vector<double> fdp_interval_weights(const FreezeDropPathConfig& config) {
  if (config.branch_count < 2) throw TrainError("freeze-drop-path needs at least 2 branches");
  const std::vector<std::int64_t> w = integer_weights(config);
  double total = 0.0;
  for (auto v : w) total += static_cast<double>(v);
  std::vector<double> out;
  for (auto v : w) out.push_back(static_cast<double>(v) / total);
  return out;
}

int fdp_active_branch(const FreezeDropPathConfig& config, std::int64_t iteration, Rng& rng) {
  if (iteration < 0) throw TrainError("iteration must be non-negative");
  if (config.branch_count < 2) throw TrainError("freeze-drop-path needs at least 2 branches");
  if (config.mode == FdpMode::kStochastic) {
    const std::vector<double> w = fdp_interval_weights(config);
    const double u = rng.uniform();
    double cum = 0.0;
    for (std::size_t b = 0; b + 1 < w.size(); ++b) {
      cum += w[b];
      if (u < cum) return static_cast<int>(b);
    }
    return config.branch_count - 1;
  }
  if (config.num_iter_per_cycle < 1) throw TrainError("num_iter_per_cycle must be positive");
  // Integer boundaries keep the partition exact: branch b owns
  // [cycle*cum_{b-1}/W, cycle*cum_b/W).
  const std::vector<std::int64_t> w = integer_weights(config);
  std::int64_t total = 0;
  for (auto v : w) total += v;
  const std::int64_t cycle = config.num_iter_per_cycle;
  const std::int64_t t = iteration % cycle;
  std::int64_t cum = 0;
  for (std::size_t b = 0; b < w.size(); ++b) {
    cum += w[b];
    if (t < cycle * cum / total) return static_cast<int>(b);
  }
  return config.branch_count - 1;
}

NodeId find_fdp_join(const ArchGraph& graph) {
  NodeId found = -1;
  int count = 0;
  for (const auto& [id, kind] : graph.nodes()) {
    if (is_join(kind, JoinKind::kFreezeDropPath)) {
      found = id;
      ++count;
    }
  }
  if (count != 1) {
    throw TrainError("graph must contain exactly one freeze-drop-path join, found " +
                     std::to_string(count));
  }
  return found;
}

EvalContext apply_fdp_masks(const ArchGraph& graph, int active, EvalContext ctx) {
  const NodeId join = find_fdp_join(graph);
  if (!ctx.masks_active()) return ctx;
  const std::vector<NodeId> branches = graph.inputs(join);
  const int k = static_cast<int>(branches.size());
  if (active < 0 || active >= k) {
    throw TrainError("active branch " + std::to_string(active) + " out of range for " +
                     std::to_string(k) + " branches");
  }
  std::vector<bool> alive(static_cast<std::size_t>(k), false);
  for (int b = 0; b <= active; ++b) alive[static_cast<std::size_t>(b)] = true;
  ctx.alive[join] = std::move(alive);

  const std::set<NodeId> trainable = ancestors(graph, branches[static_cast<std::size_t>(active)]);
  for (int b = 0; b < active; ++b) {
    for (NodeId n : ancestors(graph, branches[static_cast<std::size_t>(b)])) {
      if (!trainable.count(n) && has_parameters(graph.node(n))) ctx.frozen.insert(n);
    }
  }
  return ctx;
}

double learning_rate(const TrainConfig& config, std::int64_t iteration) {
  double lr = config.base_lr;
  for (double m : config.lr_milestones) {
    if (static_cast<double>(iteration) >= m * config.iterations) lr /= config.lr_drop_factor;
  }
  return lr;
}

}  // namespace fractal
