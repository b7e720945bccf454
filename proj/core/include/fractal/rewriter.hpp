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

#ifndef FRACTAL_REWRITER_HPP_
#define FRACTAL_REWRITER_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fractal/graph_ir.hpp"
#include "fractal/weights.hpp"

namespace fractal {

/// A rewrite whose preconditions do not hold. Nothing is modified.
class RewriteError : public GraphError {
 public:
  using GraphError::GraphError;
};

enum class RewritePass { kSumToConcat, kMeanToSumUnderBn, kCanonicalizeSkips, kPruneSlices };

std::string_view pass_name(RewritePass pass);
RewritePass parse_pass(std::string_view name);

struct AppliedRewrite {
  RewritePass pass = RewritePass::kSumToConcat;
  NodeId target = -1;                 // join (or producer, for pruning) the rewrite centred on
  std::vector<NodeId> nodes_before;   // nodes touched, as they were
  std::vector<NodeId> nodes_after;    // nodes touched or created
  std::vector<NodeId> removed_nodes;
  std::vector<Edge> removed_edges;
  std::vector<Edge> added_edges;
  std::string note;
};

struct Rewritten {
  ArchGraph graph;
  WeightStore weights;
  /// Weights for the *input* graph under which the rewrite is exact. Equal
  /// to the input weights except for prune_slices, which first zeroes the
  /// severed slices.
  WeightStore source_weights;
  std::vector<AppliedRewrite> log;
};

/// Replaces a Sum join feeding a single Conv by a Concat; the Conv's input
/// slices are replicated per branch and tied in one sharing group. With no
/// `join` every applicable Sum join is rewritten; an explicit inapplicable
/// join throws RewriteError.
Rewritten sum_to_concat(const ArchGraph& graph, const WeightStore& weights,
                        std::optional<NodeId> join = std::nullopt);

/// Replaces a Mean join whose output reaches a BatchNorm through ReLU, Pool
/// or Dropout only by a Sum. The BatchNorm epsilon and stored statistics are
/// scaled by k^2 (mean by k) so eval-mode outputs after the BatchNorm are
/// unchanged, with stored or refreshed statistics alike.
Rewritten mean_to_sum_under_bn(const ArchGraph& graph, const WeightStore& weights,
                               std::optional<NodeId> join = std::nullopt);

/// Passes the skip edge `skip` (source s into Concat join J) through the
/// chain of stride-1 Convs from s that feeds J at an adjacent ordinal.
/// Each chain Conv gains pass-through channels with pinned identity filters
/// and pinned zero cross-slices; the skip edge is removed and J collapses
/// when one input remains. With no `skip` all applicable skips are rewritten.
Rewritten canonicalize_skips(const ArchGraph& graph, const WeightStore& weights,
                             std::optional<Edge> skip = std::nullopt);

/// Severs (producer, consumer) dependencies where `producer` feeds a Concat
/// read by the Conv `consumer`: the consumer's filter slices for those
/// channels are zeroed and pinned. When every consumer of the Concat severs
/// a producer its edge is removed, the filters shrink and dead nodes go.
Rewritten prune_slices(const ArchGraph& graph, const WeightStore& weights,
                       const std::vector<std::pair<NodeId, NodeId>>& severed);

struct RewritePlan {
  std::vector<RewritePass> passes;
  std::vector<std::pair<NodeId, NodeId>> severed;  // for kPruneSlices
  std::vector<AppliedRewrite> log;                 // filled by apply_plan
};

/// Applies the passes in order; the returned plan carries the log and can be
/// replayed on the original graph.
Rewritten apply_plan(const ArchGraph& graph, const WeightStore& weights, RewritePlan& plan);

std::string plan_json(const RewritePlan& plan);
RewritePlan parse_plan(std::string_view text);

struct EquivalenceReport {
  double max_abs_diff = 0.0;
  int samples = 0;
  bool pass = false;
};

struct EquivalenceOptions {
  int samples = 100;
  double tolerance = 1e-9;
  std::uint64_t seed = 0;
  /// Recompute BN statistics of both graphs on one shared seeded batch of
  /// this many inputs before comparing (0 keeps the stored statistics).
  int refresh_bn = 0;
  /// Extra node pairs to compare besides the outputs.
  std::vector<std::pair<NodeId, NodeId>> probes;
};

/// Eval-mode comparison on seeded standard-normal inputs. Throws
/// GraphError when input or output shapes differ.
EquivalenceReport verify_equivalence(const ArchGraph& g1, const WeightStore& w1,
                                     const ArchGraph& g2, const WeightStore& w2,
                                     const EquivalenceOptions& options = {});

}  // namespace fractal

#endif  // FRACTAL_REWRITER_HPP_
