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

#include "fractal/pattern_lint.hpp"

#include <algorithm>
#include <climits>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"

namespace fractal {

namespace {

constexpr const char* kNames[15] = {
    "",
    "Architectural Structure follows the Application",
    "Proliferate Paths",
    "Strive for Simplicity",
    "Increase Symmetry",
    "Pyramid Shape",
    "Over-train",
    "Cover the Problem Space",
    "Incremental Feature Construction",
    "Normalize Layer Inputs",
    "Input Transition",
    "Available Resources Guide Layer Widths",
    "Summation Joining",
    "Down-sampling Transition",
    "Maxout for Competition",
};

PatternEntry make(int id, std::string metric_name, double metric) {
  PatternEntry e;
  e.id = id;
  e.name = kNames[id];
  e.metric_name = std::move(metric_name);
  e.metric = metric;
  return e;
}

void verdict(PatternEntry& e, bool pass, Severity fail_severity = Severity::kError) {
  e.status = pass ? PatternStatus::kPass : PatternStatus::kFail;
  e.severity = pass ? Severity::kInfo : fail_severity;
}

std::string join_ids(const std::vector<NodeId>& ids) {
  std::string s;
  for (std::size_t i = 0; i < ids.size(); ++i) s += (i ? ", " : "") + std::to_string(ids[i]);
  return s;
}

/// Immediate dominator of every node reachable from the input.
std::map<NodeId, NodeId> immediate_dominators(const ArchGraph& graph,
                                              const std::vector<NodeId>& order) {
  std::map<NodeId, int> pos;
  for (std::size_t i = 0; i < order.size(); ++i) pos[order[i]] = static_cast<int>(i);
  std::map<NodeId, std::set<NodeId>> dom;
  std::map<NodeId, NodeId> idom;
  for (NodeId v : order) {
    const std::vector<NodeId> preds = graph.inputs(v);
    std::set<NodeId> d;
    if (!preds.empty()) {
      d = dom.at(preds.front());
      for (std::size_t i = 1; i < preds.size(); ++i) {
        std::set<NodeId> keep;
        const std::set<NodeId>& other = dom.at(preds[i]);
        std::set_intersection(d.begin(), d.end(), other.begin(), other.end(),
                              std::inserter(keep, keep.begin()));
        d = std::move(keep);
      }
      NodeId best = -1;
      for (NodeId x : d) {
        if (best < 0 || pos.at(x) > pos.at(best)) best = x;
      }
      idom[v] = best;
    }
    d.insert(v);
    dom[v] = std::move(d);
  }
  return idom;
}

/// Fewest Conv nodes on any path from `from` (exclusive) to each node.
std::map<NodeId, int> conv_distances(const ArchGraph& graph, const std::vector<NodeId>& order,
                                     NodeId from) {
  std::map<NodeId, int> dist{{from, 0}};
  bool started = false;
  for (NodeId v : order) {
    if (v == from) {
      started = true;
      continue;
    }
    if (!started) continue;
    int best = INT_MAX;
    for (NodeId u : graph.inputs(v)) {
      if (auto it = dist.find(u); it != dist.end()) best = std::min(best, it->second);
    }
    if (best == INT_MAX) continue;
    dist[v] = best + (holds<op::Conv>(graph.node(v)) ? 1 : 0);
  }
  return dist;
}

/// Follows single-input passthrough nodes downstream; true when `pred`
/// holds for a node reachable that way.
template <typename Pass, typename Pred>
bool reaches_through(const ArchGraph& graph, NodeId start, Pass passthrough, Pred pred) {
  std::vector<NodeId> stack{start};
  std::set<NodeId> seen;
  while (!stack.empty()) {
    const NodeId n = stack.back();
    stack.pop_back();
    for (NodeId c : graph.consumers(n)) {
      if (!seen.insert(c).second) continue;
      if (pred(graph.node(c))) return true;
      if (passthrough(graph.node(c))) stack.push_back(c);
    }
  }
  return false;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace

std::string_view status_name(PatternStatus status) {
  switch (status) {
    case PatternStatus::kPass: return "pass";
    case PatternStatus::kFail: return "fail";
    case PatternStatus::kAdvisory: return "advisory";
  }
  return "advisory";
}

std::string_view severity_name(Severity severity) {
  switch (severity) {
    case Severity::kError: return "error";
    case Severity::kWarning: return "warning";
    case Severity::kInfo: return "info";
  }
  return "info";
}

const PatternEntry& PatternReport::entry(int id) const {
  for (const PatternEntry& e : entries) {
    if (e.id == id) return e;
  }
  throw std::out_of_range("no pattern " + std::to_string(id) + " in report");
}

bool PatternReport::ok() const {
  return std::none_of(entries.begin(), entries.end(), [](const PatternEntry& e) {
    return e.status == PatternStatus::kFail && e.severity == Severity::kError;
  });
}

std::vector<int> PatternReport::failing() const {
  std::vector<int> out;
  for (const PatternEntry& e : entries) {
    if (e.status == PatternStatus::kFail) out.push_back(e.id);
  }
  return out;
}

PatternReport lint(const ArchGraph& graph, const LintThresholds& thresholds,
                   const std::optional<LintTrainingInfo>& training) {
  const ValidationReport v = validate_or_throw(graph);
  const std::vector<NodeId>& order = v.order;
  PatternReport report;
  report.graph_name = graph.name();
  const int in_channels = v.shape(graph.input_id()).channels;

  std::vector<NodeId> convs, joins;
  for (NodeId id : order) {
    if (holds<op::Conv>(graph.node(id))) convs.push_back(id);
    if (is_join(graph.node(id))) joins.push_back(id);
  }

  // P1
  {
    const int classes = std::get<op::Predict>(graph.node(graph.output_id())).classes;
    PatternEntry e = make(1, "output_classes", classes);
    e.message = "application-specific; the graph ends in a " + std::to_string(classes) +
                "-way classifier";
    report.entries.push_back(std::move(e));
  }
  // P2
  {
    const BigInt paths = count_paths(graph);
    PatternEntry e = make(2, "paths", paths.convert_to<double>());
    e.metric_text = paths.str();
    verdict(e, paths >= thresholds.min_paths);
    e.message = e.metric_text + " input-to-output path(s); threshold " +
                std::to_string(thresholds.min_paths);
    report.entries.push_back(std::move(e));
  }
  // P3
  {
    std::set<std::string> kinds;
    for (const auto& [id, kind] : graph.nodes()) {
      std::string k(kind_name(kind));
      if (const auto* j = std::get_if<op::Join>(&kind)) k += ":" + std::string(join_kind_name(j->kind));
      kinds.insert(k);
    }
    PatternEntry e = make(3, "distinct_node_kinds", static_cast<double>(kinds.size()));
    std::string list;
    for (const std::string& k : kinds) list += (list.empty() ? "" : ", ") + k;
    e.message = "unit types in use: " + list;
    report.entries.push_back(std::move(e));
  }
  // P4
  {
    std::set<std::pair<int, int>> configs;
    for (NodeId c : convs) {
      const auto& conv = std::get<op::Conv>(graph.node(c));
      configs.insert({conv.kernel, conv.out_channels});
    }
    PatternEntry e = make(4, "distinct_conv_configurations", static_cast<double>(configs.size()));
    e.message = std::to_string(convs.size()) + " Conv node(s) in " +
                std::to_string(configs.size()) + " (kernel, width) configuration(s)";
    report.entries.push_back(std::move(e));
  }
  // P5: per-edge monotonicity, a proxy for "smooth" downsampling. The image
  // stem and the classifier are exempt; the first layer's width belongs to P10.
  {
    std::vector<NodeId> bad;
    for (const Edge& edge : graph.edges()) {
      if (edge.src == graph.input_id() || holds<op::Predict>(graph.node(edge.dst))) continue;
      const TensorShape& a = v.shape(edge.src);
      const TensorShape& b = v.shape(edge.dst);
      if (b.channels < a.channels || b.height > a.height || b.width > a.width) bad.push_back(edge.dst);
    }
    std::sort(bad.begin(), bad.end());
    bad.erase(std::unique(bad.begin(), bad.end()), bad.end());
    PatternEntry e = make(5, "non_monotone_edges", static_cast<double>(bad.size()));
    verdict(e, bad.empty());
    e.locations = bad;
    e.message = bad.empty()
                    ? "channels non-decreasing and spatial size non-increasing along every edge (monotonicity proxy for smoothness)"
                    : "pyramid broken entering node(s) " + join_ids(bad) + " (monotonicity proxy)";
    report.entries.push_back(std::move(e));
  }
  // P6
  {
    int stochastic = 0;
    for (const auto& [id, kind] : graph.nodes()) {
      if (holds<op::Dropout>(kind) || is_join(kind, JoinKind::kMean) ||
          is_join(kind, JoinKind::kFreezeDropPath)) {
        ++stochastic;
      }
    }
    PatternEntry e = make(6, "regularization_sites", stochastic);
    e.message = std::to_string(stochastic) + " dropout/drop-path site(s)";
    if (training) e.message += "; drop-path rate " + fmt(training->drop_path_rate);
    report.entries.push_back(std::move(e));
  }
  // P7
  {
    PatternEntry e = make(7, "augmentations", training && training->horizontal_flip ? 1 : 0);
    e.message = training ? (training->horizontal_flip ? "horizontal flip enabled"
                                                      : "no data augmentation configured")
                         : "training data coverage is not visible from the graph";
    report.entries.push_back(std::move(e));
  }
  // P8: bypass length between the branches of each join.
  {
    const std::map<NodeId, NodeId> idom = immediate_dominators(graph, order);
    int worst = 0;
    std::vector<NodeId> where;
    for (NodeId j : joins) {
      const NodeId d = idom.at(j);
      const std::map<NodeId, int> dist = conv_distances(graph, order, d);
      int lo = INT_MAX, hi = 0;
      for (NodeId src : graph.inputs(j)) {
        const int x = dist.at(src);
        lo = std::min(lo, x);
        hi = std::max(hi, x);
      }
      const int length = hi - lo;
      if (length > worst) {
        worst = length;
        where.clear();
      }
      if (length == worst && length > 0) where.push_back(j);
    }
    PatternEntry e = make(8, "max_bypass_conv_blocks", worst);
    verdict(e, worst < thresholds.max_bypass);
    e.locations = where;
    e.message = "longest bypass skips " + std::to_string(worst) + " Conv block(s); fail at >= " +
                std::to_string(thresholds.max_bypass);
    report.entries.push_back(std::move(e));
  }
  // P9
  {
    std::vector<NodeId> bare;
    for (NodeId c : convs) {
      const bool ok = reaches_through(
          graph, c,
          [](const NodeKind& k) { return holds<op::Activation>(k) || holds<op::Dropout>(k); },
          [](const NodeKind& k) { return holds<op::BatchNorm>(k); });
      if (!ok) bare.push_back(c);
    }
    PatternEntry e = make(9, "convs_without_batchnorm", static_cast<double>(bare.size()));
    verdict(e, bare.empty());
    e.locations = bare;
    e.message = bare.empty() ? "every Conv is followed by a BatchNorm within its block"
                             : "Conv node(s) " + join_ids(bare) + " lack a BatchNorm";
    report.entries.push_back(std::move(e));
  }
  // P10: Convs with no Conv upstream.
  {
    const std::map<NodeId, int> dist = conv_distances(graph, order, graph.input_id());
    std::vector<NodeId> first, narrow;
    int min_out = INT_MAX;
    for (NodeId c : convs) {
      if (dist.at(c) != 1) continue;
      first.push_back(c);
      const int out = std::get<op::Conv>(graph.node(c)).out_channels;
      min_out = std::min(min_out, out);
      if (out <= in_channels) narrow.push_back(c);
    }
    PatternEntry e = make(10, "first_layer_min_out_channels", first.empty() ? 0 : min_out);
    verdict(e, !first.empty() && narrow.empty());
    e.locations = first.empty() ? std::vector<NodeId>{} : (narrow.empty() ? first : narrow);
    if (first.empty()) {
      e.message = "no Conv layer found";
    } else {
      e.message = "first-layer Conv width " + std::to_string(min_out) + " vs " +
                  std::to_string(in_channels) + " input channel(s)";
    }
    report.entries.push_back(std::move(e));
  }
  // P11
  {
    double params = 0.0;
    for (NodeId id : order) {
      const NodeKind& k = graph.node(id);
      if (const auto* conv = std::get_if<op::Conv>(&k)) {
        const double in = v.shape(graph.inputs(id).front()).channels;
        params += conv->out_channels * (in * conv->kernel * conv->kernel + 1.0);
      } else if (holds<op::BatchNorm>(k)) {
        params += 2.0 * v.shape(id).channels;
      } else if (const auto* p = std::get_if<op::Predict>(&k)) {
        params += p->classes * (v.shape(graph.inputs(id).front()).channels + 1.0);
      }
    }
    PatternEntry e = make(11, "parameters", params);
    e.message = fmt(params) + " trainable parameters";
    report.entries.push_back(std::move(e));
  }
  // P12
  {
    std::vector<NodeId> summing;
    for (NodeId j : joins) {
      const JoinKind k = std::get<op::Join>(graph.node(j)).kind;
      if (k == JoinKind::kSum || k == JoinKind::kMean || k == JoinKind::kFreezeDropPath) {
        summing.push_back(j);
      }
    }
    PatternEntry e = make(12, "summation_joins", static_cast<double>(summing.size()));
    verdict(e, true);
    e.locations = summing;
    e.message = std::to_string(summing.size()) + " summation/mean join(s)";
    report.entries.push_back(std::move(e));
  }
  // P13: joins right before a resolution-reducing pool should concatenate.
  {
    std::vector<NodeId> flagged;
    for (NodeId j : joins) {
      const JoinKind k = std::get<op::Join>(graph.node(j)).kind;
      if (k != JoinKind::kSum && k != JoinKind::kMean) continue;
      const bool downsamples = reaches_through(
          graph, j,
          [](const NodeKind& n) {
            return holds<op::Activation>(n) || holds<op::Dropout>(n) || holds<op::BatchNorm>(n);
          },
          [](const NodeKind& n) {
            const auto* p = std::get_if<op::Pool>(&n);
            return p != nullptr && p->stride > 1;
          });
      if (downsamples) flagged.push_back(j);
    }
    PatternEntry e = make(13, "mean_or_sum_at_downsampling", static_cast<double>(flagged.size()));
    verdict(e, flagged.empty(), Severity::kWarning);
    e.locations = flagged;
    e.message = flagged.empty() ? "down-sampling transitions join by concatenation"
                                : "join(s) " + join_ids(flagged) +
                                      " use mean/sum right before down-sampling";
    report.entries.push_back(std::move(e));
  }
  // P14
  {
    std::vector<NodeId> competitive;
    for (NodeId j : joins) {
      if (!is_join(graph.node(j), JoinKind::kMaxout)) continue;
      std::set<int> kernels;
      for (NodeId src : graph.inputs(j)) {
        NodeId n = src;
        while (!holds<op::Conv>(graph.node(n)) && graph.inputs(n).size() == 1) n = graph.inputs(n).front();
        if (const auto* c = std::get_if<op::Conv>(&graph.node(n))) kernels.insert(c->kernel);
      }
      if (kernels.size() > 1) competitive.push_back(j);
    }
    PatternEntry e = make(14, "maxout_multi_kernel_joins", static_cast<double>(competitive.size()));
    verdict(e, true);
    e.locations = competitive;
    e.message = std::to_string(competitive.size()) + " Maxout join(s) over multi-kernel branches";
    report.entries.push_back(std::move(e));
  }

  std::sort(report.entries.begin(), report.entries.end(),
            [](const PatternEntry& a, const PatternEntry& b) { return a.id < b.id; });
  return report;
}

std::string report_json(const PatternReport& report) {
  nlohmann::json j;
  j["graph"] = report.graph_name;
  j["ok"] = report.ok();
  j["patterns"] = nlohmann::json::array();
  for (const PatternEntry& e : report.entries) {
    nlohmann::json p{{"id", e.id},
                     {"name", e.name},
                     {"status", std::string(status_name(e.status))},
                     {"severity", std::string(severity_name(e.severity))},
                     {"metric_name", e.metric_name},
                     {"metric", e.metric},
                     {"locations", e.locations},
                     {"message", e.message}};
    if (!e.metric_text.empty()) p["metric_exact"] = e.metric_text;
    j["patterns"].push_back(std::move(p));
  }
  return j.dump(1) + "\n";
}

std::string report_text(const PatternReport& report) {
  std::ostringstream out;
  out << "lint report for '" << report.graph_name << "'\n";
  for (const PatternEntry& e : report.entries) {
    char head[160];
    std::snprintf(head, sizeof head, "P%-2d %-8s %-7s %-42s", e.id,
                  std::string(status_name(e.status)).c_str(),
                  std::string(severity_name(e.severity)).c_str(), e.name.c_str());
    out << head << " " << e.metric_name << "="
        << (e.metric_text.empty() ? fmt(e.metric) : e.metric_text) << "  " << e.message << "\n";
  }
  out << (report.ok() ? "result: ok\n" : "result: FAILED\n");
  return out.str();
}

}  // namespace fractal
