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

#include "fractal/rewriter.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "fractal/nn_core.hpp"
#include "fractal/random.hpp"
#include "json.hpp"

namespace fractal {

namespace {

using nlohmann::json;

std::string id_str(NodeId id) { return std::to_string(id); }

bool in_any_group(const WeightStore& weights, NodeId node) {
  for (const SharingGroup& g : weights.groups) {
    for (const SliceRef& s : g.members) {
      if (s.node == node) return true;
    }
  }
  return false;
}

/// Concat channel offset of each inbound ordinal of `join`.
std::vector<int> concat_offsets(const ArchGraph& graph, const ValidationReport& report,
                                NodeId join) {
  std::vector<int> offsets;
  int acc = 0;
  for (NodeId src : graph.inputs(join)) {
    offsets.push_back(acc);
    acc += report.shape(src).channels;
  }
  offsets.push_back(acc);
  return offsets;
}

/// Replaces a join left with one inbound edge by a direct connection.
void collapse_join(ArchGraph& graph, NodeId join, AppliedRewrite& log) {
  const std::vector<Edge> in = graph.in_edges(join);
  if (in.size() != 1) return;
  const NodeId src = in.front().src;
  const std::vector<Edge> outgoing = graph.out_edges(join);
  log.removed_edges.push_back(in.front());
  for (const Edge& e : outgoing) log.removed_edges.push_back(e);
  graph.remove_node(join);
  log.removed_nodes.push_back(join);
  for (const Edge& e : outgoing) {
    graph.add_edge({src, e.dst, e.ordinal});
    log.added_edges.push_back({src, e.dst, e.ordinal});
  }
}

void forget_nodes(WeightStore& weights, const std::vector<NodeId>& removed) {
  const std::set<NodeId> gone(removed.begin(), removed.end());
  for (NodeId id : removed) {
    weights.params.erase(id);
    weights.bn_stats.erase(id);
  }
  for (SharingGroup& g : weights.groups) {
    std::erase_if(g.members, [&](const SliceRef& s) { return gone.count(s.node) != 0; });
  }
  std::erase_if(weights.groups, [](const SharingGroup& g) { return g.members.empty(); });
}

/// Removes input columns [begin,end) from a Conv filter bank and renumbers
/// the sharing-group slices that reference it.
void remove_input_columns(WeightStore& weights, NodeId node, int begin, int end) {
  Tensor& w = weights.param(node, kWeight);
  const int rows = w.dim(0), cols = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  const int width = end - begin;
  Tensor out({rows, cols - width, kh, kw});
  const std::size_t inner = static_cast<std::size_t>(kh) * kw;
  for (int o = 0; o < rows; ++o) {
    int dst = 0;
    for (int i = 0; i < cols; ++i) {
      if (i >= begin && i < end) continue;
      std::copy_n(w.raw() + (static_cast<std::size_t>(o) * cols + i) * inner, inner,
                  out.raw() + (static_cast<std::size_t>(o) * (cols - width) + dst) * inner);
      ++dst;
    }
  }
  w = std::move(out);
  for (SharingGroup& g : weights.groups) {
    std::vector<SliceRef> kept;
    for (SliceRef s : g.members) {
      if (s.node != node || s.param != kWeight) {
        kept.push_back(s);
      } else if (s.in_end <= begin) {
        kept.push_back(s);
      } else if (s.in_begin >= end) {
        s.in_begin -= width;
        s.in_end -= width;
        kept.push_back(s);
      } else if (s.in_begin < begin || s.in_end > end) {
        throw RewriteError("sharing group '" + g.label + "' partially overlaps pruned columns of node " +
                           id_str(node));
      }
    }
    g.members = std::move(kept);
  }
  std::erase_if(weights.groups, [](const SharingGroup& g) { return g.members.empty(); });
}

// ---------------------------------------------------------------------------
// sum_to_concat

std::string sum_to_concat_blocker(const ArchGraph& graph, const WeightStore& weights, NodeId join) {
  if (!graph.contains(join)) return "node " + id_str(join) + " does not exist";
  if (!is_join(graph.node(join), JoinKind::kSum)) return "node " + id_str(join) + " is not a Sum join";
  if (graph.inputs(join).size() < 2) return "join " + id_str(join) + " has a single inbound edge";
  const std::vector<Edge> out = graph.out_edges(join);
  if (out.size() != 1) return "join " + id_str(join) + " must feed exactly one consumer";
  if (!holds<op::Conv>(graph.node(out.front().dst))) {
    return "consumer of join " + id_str(join) + " is a " +
           std::string(kind_name(graph.node(out.front().dst))) + ", not a Conv";
  }
  if (in_any_group(weights, out.front().dst)) {
    return "consumer Conv " + id_str(out.front().dst) + " already belongs to a sharing group";
  }
  return {};
}

void apply_sum_to_concat(ArchGraph& graph, WeightStore& weights, NodeId join,
                         std::vector<AppliedRewrite>& log) {
  const NodeId conv = graph.out_edges(join).front().dst;
  const int k = static_cast<int>(graph.inputs(join).size());
  const Tensor w = weights.param(conv, kWeight);
  const int rows = w.dim(0), c = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  const std::size_t inner = static_cast<std::size_t>(kh) * kw;
  Tensor wide({rows, k * c, kh, kw});
  SharingGroup group;
  group.label = "sum_to_concat:" + id_str(join);
  for (int b = 0; b < k; ++b) {
    for (int o = 0; o < rows; ++o) {
      std::copy_n(w.raw() + static_cast<std::size_t>(o) * c * inner, c * inner,
                  wide.raw() + (static_cast<std::size_t>(o) * k * c + static_cast<std::size_t>(b) * c) *
                                   inner);
    }
    group.members.push_back({conv, std::string(kWeight), 0, rows, b * c, (b + 1) * c});
  }
  weights.param(conv, kWeight) = std::move(wide);
  weights.groups.push_back(std::move(group));
  std::get<op::Join>(graph.node(join)).kind = JoinKind::kConcat;

  AppliedRewrite entry;
  entry.pass = RewritePass::kSumToConcat;
  entry.target = join;
  entry.nodes_before = {join, conv};
  entry.nodes_after = {join, conv};
  entry.note = "Sum over " + std::to_string(k) + " branches of " + std::to_string(c) +
               " channels became Concat; Conv " + id_str(conv) + " input widened to " +
               std::to_string(k * c) + " with one sharing group";
  log.push_back(std::move(entry));
}

// ---------------------------------------------------------------------------
// mean_to_sum_under_bn

std::string mean_to_sum_blocker(const ArchGraph& graph, NodeId join, NodeId* bn_out) {
  if (!graph.contains(join)) return "node " + id_str(join) + " does not exist";
  if (!is_join(graph.node(join), JoinKind::kMean)) return "node " + id_str(join) + " is not a Mean join";
  NodeId node = join;
  while (true) {
    const std::vector<Edge> out = graph.out_edges(node);
    if (out.size() != 1) {
      return "output of node " + id_str(node) + " branches before reaching a BatchNorm";
    }
    node = out.front().dst;
    const NodeKind& kind = graph.node(node);
    if (holds<op::BatchNorm>(kind)) break;
    if (holds<op::Activation>(kind) || holds<op::Pool>(kind) || holds<op::Dropout>(kind)) continue;
    return "Mean join " + id_str(join) + " reaches " + std::string(kind_name(kind)) + " node " +
           id_str(node) + " before any BatchNorm";
  }
  *bn_out = node;
  return {};
}

void apply_mean_to_sum(ArchGraph& graph, WeightStore& weights, NodeId join, NodeId bn,
                       std::vector<AppliedRewrite>& log) {
  const double k = static_cast<double>(graph.inputs(join).size());
  std::get<op::Join>(graph.node(join)).kind = JoinKind::kSum;
  std::get<op::BatchNorm>(graph.node(bn)).epsilon *= k * k;
  if (auto it = weights.bn_stats.find(bn); it != weights.bn_stats.end()) {
    for (double& m : it->second.mean) m *= k;
    for (double& v : it->second.var) v *= k * k;
  }
  AppliedRewrite entry;
  entry.pass = RewritePass::kMeanToSumUnderBn;
  entry.target = join;
  entry.nodes_before = {join, bn};
  entry.nodes_after = {join, bn};
  entry.note = "Mean became Sum; BatchNorm " + id_str(bn) + " epsilon and statistics rescaled by k=" +
               std::to_string(static_cast<int>(k));
  log.push_back(std::move(entry));
}

// ---------------------------------------------------------------------------
// canonicalize_skips

struct SkipChain {
  std::vector<NodeId> convs;  // forward order, convs.front() reads the skip source
  bool prepend = false;       // pass-through channels precede the chain's own
};

std::string chain_from(const ArchGraph& graph, const ValidationReport& report, NodeId source,
                       NodeId tail, SkipChain* chain) {
  if (tail == source) return "skip runs parallel to another edge (no intermediate Conv)";
  std::vector<NodeId> nodes;
  NodeId node = tail;
  while (node != source) {
    const NodeKind& kind = graph.node(node);
    if (holds<op::Pool>(kind)) {
      return "bypass crosses pool node " + id_str(node) + " (resolution change)";
    }
    const auto* conv = std::get_if<op::Conv>(&kind);
    if (conv == nullptr) {
      return "bypassed chain contains " + std::string(kind_name(kind)) + " node " + id_str(node) +
             "; only Conv chains can carry pass-through channels";
    }
    const NodeId src = graph.inputs(node).front();
    if (conv->stride != 1 || !(report.shape(node).height == report.shape(src).height &&
                               report.shape(node).width == report.shape(src).width)) {
      return "bypass crosses Conv " + id_str(node) + " which changes resolution";
    }
    if (graph.out_edges(node).size() != 1) {
      return "intermediate Conv " + id_str(node) + " has more than one consumer";
    }
    nodes.push_back(node);
    if (src == graph.input_id() && src != source) return "chain does not start at the skip source";
    node = src;
  }
  std::reverse(nodes.begin(), nodes.end());
  chain->convs = std::move(nodes);
  return {};
}

std::string skip_blocker(const ArchGraph& graph, const WeightStore& weights,
                         const ValidationReport& report, const Edge& skip, SkipChain* chain) {
  const std::vector<Edge>& edges = graph.edges();
  if (std::find(edges.begin(), edges.end(), skip) == edges.end()) {
    return "edge " + id_str(skip.src) + "->" + id_str(skip.dst) + " (ordinal " +
           std::to_string(skip.ordinal) + ") does not exist";
  }
  if (!is_join(graph.node(skip.dst), JoinKind::kConcat)) {
    return "skip must land on a Concat join (apply sum_to_concat first for Sum joins)";
  }
  const std::vector<NodeId> in = graph.inputs(skip.dst);
  std::string reason = "no adjacent Concat input is a Conv chain from the skip source";
  for (int q : {skip.ordinal + 1, skip.ordinal - 1}) {
    if (q < 0 || q >= static_cast<int>(in.size())) continue;
    SkipChain candidate;
    const std::string why = chain_from(graph, report, skip.src, in[static_cast<std::size_t>(q)], &candidate);
    if (!why.empty()) {
      reason = why;
      continue;
    }
    for (NodeId c : candidate.convs) {
      if (in_any_group(weights, c)) return "chain Conv " + id_str(c) + " already belongs to a sharing group";
    }
    candidate.prepend = q > skip.ordinal;
    *chain = std::move(candidate);
    return {};
  }
  return reason;
}

void apply_skip(ArchGraph& graph, WeightStore& weights, const ValidationReport& report,
                const Edge& skip, const SkipChain& chain, std::vector<AppliedRewrite>& log) {
  const int cs = report.shape(skip.src).channels;
  AppliedRewrite entry;
  entry.pass = RewritePass::kCanonicalizeSkips;
  entry.target = skip.dst;
  entry.nodes_before = chain.convs;
  entry.nodes_before.push_back(skip.dst);

  for (std::size_t i = 0; i < chain.convs.size(); ++i) {
    const NodeId id = chain.convs[i];
    const Tensor w = weights.param(id, kWeight);
    const Tensor b = weights.param(id, kBias);
    const int rows = w.dim(0), cols = w.dim(1), kh = w.dim(2), kw = w.dim(3);
    const int extra_in = i == 0 ? 0 : cs;
    Tensor nw({rows + cs, cols + extra_in, kh, kw});
    Tensor nb({rows + cs});
    const int row0 = chain.prepend ? cs : 0;                   // original filters
    const int id_row0 = chain.prepend ? 0 : rows;              // pass-through filters
    const int col0 = (i > 0 && chain.prepend) ? cs : 0;        // original input channels
    const int pt_col0 = i == 0 ? 0 : (chain.prepend ? 0 : cols);  // pass-through inputs
    for (int o = 0; o < rows; ++o) {
      nb[static_cast<std::size_t>(row0 + o)] = b[static_cast<std::size_t>(o)];
      for (int c = 0; c < cols; ++c) {
        for (int y = 0; y < kh; ++y) {
          for (int x = 0; x < kw; ++x) nw.at(row0 + o, col0 + c, y, x) = w.at(o, c, y, x);
        }
      }
    }
    for (int j = 0; j < cs; ++j) nw.at(id_row0 + j, pt_col0 + j, kh / 2, kw / 2) = 1.0;
    weights.param(id, kWeight) = std::move(nw);
    weights.param(id, kBias) = std::move(nb);
    std::get<op::Conv>(graph.node(id)).out_channels = rows + cs;

    const std::string label = "canonicalize_skips:" + id_str(skip.src) + "->" + id_str(skip.dst);
    auto pin = [&](SliceRef s, const std::string& what) {
      weights.groups.push_back({{std::move(s)}, true, label + ":" + what});
    };
    const std::string w_name(kWeight), b_name(kBias);
    if (i == 0) {
      pin({id, w_name, id_row0, id_row0 + cs, 0, cols}, "identity");
    } else {
      pin({id, w_name, id_row0, id_row0 + cs, pt_col0, pt_col0 + cs}, "identity");
      pin({id, w_name, row0, row0 + rows, pt_col0, pt_col0 + cs}, "zero-cross");
      pin({id, w_name, id_row0, id_row0 + cs, col0, col0 + cols}, "zero-cross");
    }
    pin({id, b_name, id_row0, id_row0 + cs, 0, 0}, "zero-bias");
  }

  graph.remove_edge(skip.src, skip.dst, skip.ordinal);
  entry.removed_edges.push_back(skip);
  graph.compact_ordinals(skip.dst);
  collapse_join(graph, skip.dst, entry);
  entry.nodes_after = chain.convs;
  if (graph.contains(skip.dst)) entry.nodes_after.push_back(skip.dst);
  entry.note = "skip from " + id_str(skip.src) + " passed through " +
               std::to_string(chain.convs.size()) + " Conv node(s) with " + std::to_string(cs) +
               " identity channel(s)";
  log.push_back(std::move(entry));
}

}  // namespace

std::string_view pass_name(RewritePass pass) {
  switch (pass) {
    case RewritePass::kSumToConcat: return "sum_to_concat";
    case RewritePass::kMeanToSumUnderBn: return "mean_to_sum_under_bn";
    case RewritePass::kCanonicalizeSkips: return "canonicalize_skips";
    case RewritePass::kPruneSlices: return "prune_slices";
  }
  return "unknown";
}

RewritePass parse_pass(std::string_view name) {
  for (RewritePass p : {RewritePass::kSumToConcat, RewritePass::kMeanToSumUnderBn,
                        RewritePass::kCanonicalizeSkips, RewritePass::kPruneSlices}) {
    if (pass_name(p) == name) return p;
  }
  throw RewriteError("unknown rewrite pass '" + std::string(name) + "'");
}

Rewritten sum_to_concat(const ArchGraph& graph, const WeightStore& weights,
                        std::optional<NodeId> join) {
  validate_or_throw(graph);
  Rewritten r{graph, weights, weights, {}};
  if (join) {
    const std::string why = sum_to_concat_blocker(graph, weights, *join);
    if (!why.empty()) throw RewriteError("sum_to_concat inapplicable: " + why);
    apply_sum_to_concat(r.graph, r.weights, *join, r.log);
  } else {
    for (const auto& [id, kind] : graph.nodes()) {
      if (is_join(kind, JoinKind::kSum) && sum_to_concat_blocker(r.graph, r.weights, id).empty()) {
        apply_sum_to_concat(r.graph, r.weights, id, r.log);
      }
    }
  }
  check_weights(r.graph, r.weights);
  return r;
}

Rewritten mean_to_sum_under_bn(const ArchGraph& graph, const WeightStore& weights,
                               std::optional<NodeId> join) {
  validate_or_throw(graph);
  Rewritten r{graph, weights, weights, {}};
  NodeId bn = -1;
  if (join) {
    const std::string why = mean_to_sum_blocker(graph, *join, &bn);
    if (!why.empty()) throw RewriteError("mean_to_sum_under_bn inapplicable: " + why);
    apply_mean_to_sum(r.graph, r.weights, *join, bn, r.log);
  } else {
    for (const auto& [id, kind] : graph.nodes()) {
      if (is_join(kind, JoinKind::kMean) && mean_to_sum_blocker(graph, id, &bn).empty()) {
        apply_mean_to_sum(r.graph, r.weights, id, bn, r.log);
      }
    }
  }
  return r;
}

Rewritten canonicalize_skips(const ArchGraph& graph, const WeightStore& weights,
                             std::optional<Edge> skip) {
  Rewritten r{graph, weights, weights, {}};
  if (skip) {
    const ValidationReport report = validate_or_throw(r.graph);
    SkipChain chain;
    const std::string why = skip_blocker(r.graph, r.weights, report, *skip, &chain);
    if (!why.empty()) throw RewriteError("canonicalize_skips inapplicable: " + why);
    apply_skip(r.graph, r.weights, report, *skip, chain, r.log);
  } else {
    bool changed = true;
    while (changed) {
      changed = false;
      const ValidationReport report = validate_or_throw(r.graph);
      for (const Edge& e : r.graph.edges()) {
        if (!is_join(r.graph.node(e.dst), JoinKind::kConcat)) continue;
        SkipChain chain;
        if (skip_blocker(r.graph, r.weights, report, e, &chain).empty()) {
          const Edge found = e;
          apply_skip(r.graph, r.weights, report, found, chain, r.log);
          changed = true;
          break;
        }
      }
    }
  }
  r.graph.canonicalize_edges();
  check_weights(r.graph, r.weights);
  return r;
}

Rewritten prune_slices(const ArchGraph& graph, const WeightStore& weights,
                       const std::vector<std::pair<NodeId, NodeId>>& severed) {
  const ValidationReport report = validate_or_throw(graph);
  Rewritten r{graph, weights, weights, {}};

  // (join, producer) -> consumers that sever it
  std::map<std::pair<NodeId, NodeId>, std::set<NodeId>> cut;
  for (const auto& [producer, consumer] : severed) {
    const std::string pair = "(" + id_str(producer) + ", " + id_str(consumer) + ")";
    if (!graph.contains(consumer) || !holds<op::Conv>(graph.node(consumer))) {
      throw RewriteError("prune_slices: pair " + pair + " is not connected via Concat (consumer is not a Conv)");
    }
    const NodeId join = graph.inputs(consumer).front();
    const std::vector<NodeId> in = graph.inputs(join);
    if (!is_join(graph.node(join), JoinKind::kConcat) ||
        std::find(in.begin(), in.end(), producer) == in.end()) {
      throw RewriteError("prune_slices: pair " + pair + " is not connected via Concat");
    }
    cut[{join, producer}].insert(consumer);
  }

  AppliedRewrite entry;
  entry.pass = RewritePass::kPruneSlices;
  // Zero and pin the severed slices.
  for (const auto& [key, consumers] : cut) {
    const auto [join, producer] = key;
    const std::vector<NodeId> in = graph.inputs(join);
    const std::vector<int> offsets = concat_offsets(graph, report, join);
    for (NodeId consumer : consumers) {
      for (std::size_t q = 0; q < in.size(); ++q) {
        if (in[q] != producer) continue;
        const SliceRef slice{consumer, std::string(kWeight), 0,
                             r.weights.param(consumer, kWeight).dim(0), offsets[q], offsets[q + 1]};
        for (WeightStore* store : {&r.weights, &r.source_weights}) {
          Tensor& w = store->param(consumer, kWeight);
          for (std::size_t i : slice_indices(w, slice)) w[i] = 0.0;
        }
        r.weights.groups.push_back({{slice}, true,
                                    "prune_slices:" + id_str(producer) + "->" + id_str(consumer)});
      }
      entry.nodes_before.push_back(consumer);
    }
    entry.nodes_before.push_back(producer);
  }

  // Remove edges every consumer severs; shrink the filters to match.
  std::set<NodeId> touched_joins;
  for (const auto& [key, consumers] : cut) {
    const auto [join, producer] = key;
    const std::vector<NodeId> readers = graph.consumers(join);
    bool all = true;
    for (NodeId c : readers) all = all && consumers.count(c) != 0;
    if (!all) continue;
    touched_joins.insert(join);
  }
  for (NodeId join : touched_joins) {
    const std::vector<Edge> in = r.graph.in_edges(join);
    const std::vector<int> offsets = concat_offsets(graph, report, join);
    std::vector<std::size_t> drop;  // ordinals to remove, highest first
    for (std::size_t q = 0; q < in.size(); ++q) {
      const auto it = cut.find({join, in[q].src});
      if (it == cut.end()) continue;
      bool all = true;
      for (NodeId c : graph.consumers(join)) all = all && it->second.count(c) != 0;
      if (all) drop.push_back(q);
    }
    if (drop.size() == in.size()) {
      throw GraphError("prune_slices: severing every input of join " + id_str(join) +
                       " would leave its consumers without input");
    }
    std::sort(drop.rbegin(), drop.rend());
    for (std::size_t q : drop) {
      for (NodeId c : graph.consumers(join)) {
        remove_input_columns(r.weights, c, offsets[q], offsets[q + 1]);
      }
      r.graph.remove_edge(in[q].src, join, in[q].ordinal);
      entry.removed_edges.push_back(in[q]);
    }
    r.graph.compact_ordinals(join);
    entry.target = join;
    collapse_join(r.graph, join, entry);
  }

  const std::vector<NodeId> dead = remove_dead_nodes(r.graph);
  entry.removed_nodes.insert(entry.removed_nodes.end(), dead.begin(), dead.end());
  forget_nodes(r.weights, dead);
  for (NodeId n : entry.nodes_before) {
    if (r.graph.contains(n)) entry.nodes_after.push_back(n);
  }
  entry.note = std::to_string(severed.size()) + " dependency(ies) severed, " +
               std::to_string(entry.removed_edges.size()) + " edge(s) and " +
               std::to_string(dead.size()) + " dead node(s) removed";
  r.log.push_back(std::move(entry));
  r.graph.canonicalize_edges();
  validate_or_throw(r.graph);
  check_weights(r.graph, r.weights);
  return r;
}

Rewritten apply_plan(const ArchGraph& graph, const WeightStore& weights, RewritePlan& plan) {
  for (std::size_t i = 1; i < plan.passes.size(); ++i) {
    if (plan.passes[i] == RewritePass::kPruneSlices) {
      throw RewriteError("prune_slices must be the first pass of a plan (its pairs name nodes of the input graph)");
    }
  }
  Rewritten current{graph, weights, weights, {}};
  for (std::size_t i = 0; i < plan.passes.size(); ++i) {
    Rewritten next;
    switch (plan.passes[i]) {
      case RewritePass::kSumToConcat: next = sum_to_concat(current.graph, current.weights); break;
      case RewritePass::kMeanToSumUnderBn:
        next = mean_to_sum_under_bn(current.graph, current.weights);
        break;
      case RewritePass::kCanonicalizeSkips:
        next = canonicalize_skips(current.graph, current.weights);
        break;
      case RewritePass::kPruneSlices:
        next = prune_slices(current.graph, current.weights, plan.severed);
        break;
    }
    if (i == 0) current.source_weights = next.source_weights;
    current.graph = std::move(next.graph);
    current.weights = std::move(next.weights);
    current.log.insert(current.log.end(), next.log.begin(), next.log.end());
  }
  plan.log = current.log;
  return current;
}

std::string plan_json(const RewritePlan& plan) {
  json j;
  j["passes"] = json::array();
  for (RewritePass p : plan.passes) j["passes"].push_back(std::string(pass_name(p)));
  j["severed"] = json::array();
  for (const auto& [p, c] : plan.severed) j["severed"].push_back({p, c});
  j["log"] = json::array();
  for (const AppliedRewrite& a : plan.log) {
    auto edges = [](const std::vector<Edge>& es) {
      json out = json::array();
      for (const Edge& e : es) out.push_back({{"src", e.src}, {"dst", e.dst}, {"ordinal", e.ordinal}});
      return out;
    };
    j["log"].push_back({{"pass", std::string(pass_name(a.pass))},
                        {"target", a.target},
                        {"nodes_before", a.nodes_before},
                        {"nodes_after", a.nodes_after},
                        {"removed_nodes", a.removed_nodes},
                        {"removed_edges", edges(a.removed_edges)},
                        {"added_edges", edges(a.added_edges)},
                        {"note", a.note}});
  }
  return j.dump(1) + "\n";
}

RewritePlan parse_plan(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw RewriteError(std::string("malformed plan JSON: ") + e.what());
  }
  RewritePlan plan;
  try {
    for (const auto& p : j.at("passes")) plan.passes.push_back(parse_pass(p.get<std::string>()));
    if (j.contains("severed")) {
      for (const auto& s : j.at("severed")) {
        plan.severed.emplace_back(s.at(0).get<NodeId>(), s.at(1).get<NodeId>());
      }
    }
    if (j.contains("log")) {
      auto edges = [](const json& es) {
        std::vector<Edge> out;
        for (const auto& e : es) {
          out.push_back({e.at("src").get<NodeId>(), e.at("dst").get<NodeId>(), e.at("ordinal").get<int>()});
        }
        return out;
      };
      for (const auto& a : j.at("log")) {
        AppliedRewrite entry;
        entry.pass = parse_pass(a.at("pass").get<std::string>());
        entry.target = a.at("target").get<NodeId>();
        entry.nodes_before = a.at("nodes_before").get<std::vector<NodeId>>();
        entry.nodes_after = a.at("nodes_after").get<std::vector<NodeId>>();
        entry.removed_nodes = a.at("removed_nodes").get<std::vector<NodeId>>();
        entry.removed_edges = edges(a.at("removed_edges"));
        entry.added_edges = edges(a.at("added_edges"));
        entry.note = a.at("note").get<std::string>();
        plan.log.push_back(std::move(entry));
      }
    }
  } catch (const json::exception& e) {
    throw RewriteError(std::string("malformed plan: ") + e.what());
  }
  return plan;
}

EquivalenceReport verify_equivalence(const ArchGraph& g1, const WeightStore& w1,
                                     const ArchGraph& g2, const WeightStore& w2,
                                     const EquivalenceOptions& options) {
  const ValidationReport r1 = validate_or_throw(g1);
  const ValidationReport r2 = validate_or_throw(g2);
  const TensorShape in1 = r1.shape(g1.input_id());
  if (!(in1 == r2.shape(g2.input_id()))) {
    throw GraphError("input shapes differ: " + in1.to_string() + " vs " +
                     r2.shape(g2.input_id()).to_string());
  }
  if (!(r1.shape(g1.output_id()) == r2.shape(g2.output_id()))) {
    throw GraphError("output shapes differ: " + r1.shape(g1.output_id()).to_string() + " vs " +
                     r2.shape(g2.output_id()).to_string());
  }
  if (options.samples < 1) throw GraphError("equivalence check needs at least one sample");

  auto random_batch = [&](Rng& rng, int n) {
    Tensor x({n, in1.channels, in1.height, in1.width});
    for (double& v : x.data()) v = rng.normal();
    return x;
  };

  WeightStore a = w1, b = w2;
  if (options.refresh_bn > 0) {
    Rng rng(mix_seed(options.seed, 0xb7ULL));
    const Tensor calib = random_batch(rng, options.refresh_bn);
    refresh_bn_statistics(g1, a, calib);
    refresh_bn_statistics(g2, b, calib);
  }

  EquivalenceReport report;
  Rng rng(mix_seed(options.seed, 0xe9ULL));
  const EvalContext ctx{};
  const ForwardOptions fo{.retain = !options.probes.empty()};
  constexpr int kChunk = 25;
  for (int done = 0; done < options.samples; done += kChunk) {
    const int n = std::min(kChunk, options.samples - done);
    const Tensor x = random_batch(rng, n);
    const ForwardPass p1 = forward(g1, a, x, ctx, fo);
    const ForwardPass p2 = forward(g2, b, x, ctx, fo);
    report.max_abs_diff = std::max(report.max_abs_diff, max_abs_diff(p1.output(), p2.output()));
    for (const auto& [n1, n2] : options.probes) {
      report.max_abs_diff = std::max(report.max_abs_diff, max_abs_diff(p1.value(n1), p2.value(n2)));
    }
    report.samples += n;
  }
  report.pass = report.max_abs_diff <= options.tolerance;
  return report;
}

}  // namespace fractal
