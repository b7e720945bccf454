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

#include "fractal/graph_ir.hpp"

#include <algorithm>
#include <queue>
#include <set>
#include <sstream>

namespace fractal {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

std::string node_label(const ArchGraph& g, NodeId id) {
  std::ostringstream os;
  os << "node " << id << " (" << kind_name(g.node(id)) << ")";
  return os.str();
}

}  // namespace

std::string TensorShape::to_string() const {
  std::ostringstream os;
  os << channels << "x" << height << "x" << width;
  return os.str();
}

std::string_view kind_name(const NodeKind& kind) {
  return std::visit(Overloaded{
                        [](const op::Input&) { return std::string_view("input"); },
                        [](const op::Conv&) { return std::string_view("conv"); },
                        [](const op::BatchNorm&) { return std::string_view("batch_norm"); },
                        [](const op::Activation&) { return std::string_view("activation"); },
                        [](const op::Pool&) { return std::string_view("pool"); },
                        [](const op::Dropout&) { return std::string_view("dropout"); },
                        [](const op::ElementwisePower&) { return std::string_view("power"); },
                        [](const op::Join&) { return std::string_view("join"); },
                        [](const op::Predict&) { return std::string_view("predict"); },
                    },
                    kind);
}

std::string_view join_kind_name(JoinKind kind) {
  switch (kind) {
    case JoinKind::kSum: return "sum";
    case JoinKind::kMean: return "mean";
    case JoinKind::kConcat: return "concat";
    case JoinKind::kMaxout: return "maxout";
    case JoinKind::kFreezeDropPath: return "freeze_drop_path";
  }
  return "?";
}

std::string describe(const NodeKind& kind) {
  std::ostringstream os;
  std::visit(Overloaded{
                 [&](const op::Input& n) { os << "Input " << n.shape.to_string(); },
                 [&](const op::Conv& n) {
                   os << "Conv " << n.out_channels << " k" << n.kernel << " s" << n.stride
                      << " p" << n.pad;
                 },
                 [&](const op::BatchNorm&) { os << "BatchNorm"; },
                 [&](const op::Activation&) { os << "ReLU"; },
                 [&](const op::Pool& n) {
                   os << (n.kind == PoolKind::kMax ? "MaxPool " : "AvgPool ") << n.window
                      << "/" << n.stride;
                 },
                 [&](const op::Dropout& n) { os << "Dropout " << n.rate; },
                 [&](const op::ElementwisePower& n) { os << "Power " << n.exponent; },
                 [&](const op::Join& n) { os << "Join " << join_kind_name(n.kind); },
                 [&](const op::Predict& n) { os << "Predict " << n.classes; },
             },
             kind);
  return os.str();
}

bool is_join(const NodeKind& kind) { return holds<op::Join>(kind); }

bool is_join(const NodeKind& kind, JoinKind which) {
  const auto* join = std::get_if<op::Join>(&kind);
  return join != nullptr && join->kind == which;
}

bool has_parameters(const NodeKind& kind) {
  return holds<op::Conv>(kind) || holds<op::BatchNorm>(kind) || holds<op::Predict>(kind);
}

// ---------------------------------------------------------------------------
// ArchGraph

NodeId ArchGraph::next_id() const { return nodes_.empty() ? 0 : nodes_.rbegin()->first + 1; }

NodeId ArchGraph::add_node(NodeKind kind) {
  const NodeId id = next_id();
  nodes_.emplace(id, std::move(kind));
  return id;
}

void ArchGraph::insert_node(NodeId id, NodeKind kind) {
  if (id < 0) throw GraphError("negative node id " + std::to_string(id));
  if (!nodes_.emplace(id, std::move(kind)).second) {
    throw GraphError("duplicate node id " + std::to_string(id));
  }
}

void ArchGraph::remove_node(NodeId id) {
  if (nodes_.erase(id) == 0) throw GraphError("no node " + std::to_string(id));
  std::erase_if(edges_, [id](const Edge& e) { return e.src == id || e.dst == id; });
}

void ArchGraph::connect(NodeId src, NodeId dst) {
  int ordinal = 0;
  for (const Edge& e : edges_) {
    if (e.dst == dst) ordinal = std::max(ordinal, e.ordinal + 1);
  }
  add_edge({src, dst, ordinal});
}

void ArchGraph::add_edge(Edge edge) {
  if (!contains(edge.src) || !contains(edge.dst)) {
    throw GraphError("edge " + std::to_string(edge.src) + "->" + std::to_string(edge.dst) +
                     " references a missing node");
  }
  edges_.push_back(edge);
}

void ArchGraph::remove_edge(NodeId src, NodeId dst, int ordinal) {
  auto it = std::find(edges_.begin(), edges_.end(), Edge{src, dst, ordinal});
  if (it == edges_.end()) {
    throw GraphError("no edge " + std::to_string(src) + "->" + std::to_string(dst));
  }
  edges_.erase(it);
}

void ArchGraph::compact_ordinals(NodeId dst) {
  std::vector<Edge*> inbound;
  for (Edge& e : edges_) {
    if (e.dst == dst) inbound.push_back(&e);
  }
  std::sort(inbound.begin(), inbound.end(),
            [](const Edge* a, const Edge* b) { return a->ordinal < b->ordinal; });
  for (std::size_t i = 0; i < inbound.size(); ++i) inbound[i]->ordinal = static_cast<int>(i);
}

const NodeKind& ArchGraph::node(NodeId id) const {
  auto it = nodes_.find(id);
  if (it == nodes_.end()) throw GraphError("no node " + std::to_string(id));
  return it->second;
}

NodeKind& ArchGraph::node(NodeId id) {
  auto it = nodes_.find(id);
  if (it == nodes_.end()) throw GraphError("no node " + std::to_string(id));
  return it->second;
}

std::vector<Edge> ArchGraph::in_edges(NodeId dst) const {
  std::vector<Edge> out;
  for (const Edge& e : edges_) {
    if (e.dst == dst) out.push_back(e);
  }
  std::sort(out.begin(), out.end(),
            [](const Edge& a, const Edge& b) { return a.ordinal < b.ordinal; });
  return out;
}

std::vector<NodeId> ArchGraph::inputs(NodeId dst) const {
  std::vector<NodeId> out;
  for (const Edge& e : in_edges(dst)) out.push_back(e.src);
  return out;
}

std::vector<Edge> ArchGraph::out_edges(NodeId src) const {
  std::vector<Edge> out;
  for (const Edge& e : edges_) {
    if (e.src == src) out.push_back(e);
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<NodeId> ArchGraph::consumers(NodeId src) const {
  std::vector<NodeId> out;
  for (const Edge& e : out_edges(src)) out.push_back(e.dst);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<NodeId> ArchGraph::topological_order() const {
  std::map<NodeId, int> indegree;
  std::map<NodeId, std::vector<NodeId>> succ;
  for (const auto& [id, kind] : nodes_) indegree[id] = 0;
  for (const Edge& e : edges_) {
    ++indegree[e.dst];
    succ[e.src].push_back(e.dst);
  }
  std::priority_queue<NodeId, std::vector<NodeId>, std::greater<>> ready;
  for (const auto& [id, deg] : indegree) {
    if (deg == 0) ready.push(id);
  }
  std::vector<NodeId> order;
  order.reserve(nodes_.size());
  while (!ready.empty()) {
    const NodeId id = ready.top();
    ready.pop();
    order.push_back(id);
    for (NodeId next : succ[id]) {
      if (--indegree[next] == 0) ready.push(next);
    }
  }
  if (order.size() != nodes_.size()) throw GraphError("cycle detected in graph '" + name_ + "'");
  return order;
}

void ArchGraph::canonicalize_edges() {
  std::sort(edges_.begin(), edges_.end(), [](const Edge& a, const Edge& b) {
    return std::tie(a.dst, a.ordinal, a.src) < std::tie(b.dst, b.ordinal, b.src);
  });
}

bool ArchGraph::operator==(const ArchGraph& other) const {
  if (name_ != other.name_ || input_id_ != other.input_id_ || output_id_ != other.output_id_ ||
      nodes_ != other.nodes_) {
    return false;
  }
  auto a = edges_;
  auto b = other.edges_;
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  return a == b;
}

// ---------------------------------------------------------------------------
// Validation and shape inference

const TensorShape& ValidationReport::shape(NodeId id) const {
  auto it = shapes.find(id);
  if (it == shapes.end()) throw GraphError("no inferred shape for node " + std::to_string(id));
  return it->second;
}

std::vector<NodeId> remove_dead_nodes(ArchGraph& graph) {
  std::set<NodeId> live{graph.output_id()};
  std::vector<NodeId> stack{graph.output_id()};
  while (!stack.empty()) {
    const NodeId n = stack.back();
    stack.pop_back();
    for (NodeId src : graph.inputs(n)) {
      if (live.insert(src).second) stack.push_back(src);
    }
  }
  std::vector<NodeId> dead;
  for (const auto& [id, kind] : graph.nodes()) {
    if (id != graph.input_id() && !live.count(id)) dead.push_back(id);
  }
  for (NodeId id : dead) graph.remove_node(id);
  return dead;
}

int window_output(int in, int window, int stride, int pad) {
  const int span = in + 2 * pad - window;
  if (span < 0 || stride <= 0) return 0;
  return span / stride + 1;
}

ValidationReport validate(const ArchGraph& graph) {
  ValidationReport report;
  auto& v = report.violations;

  if (!graph.contains(graph.input_id()) || !holds<op::Input>(graph.node(graph.input_id()))) {
    v.push_back("input id " + std::to_string(graph.input_id()) + " is not an Input node");
  }
  if (!graph.contains(graph.output_id()) || !holds<op::Predict>(graph.node(graph.output_id()))) {
    v.push_back("output id " + std::to_string(graph.output_id()) + " is not a Predict node");
  }
  for (const Edge& e : graph.edges()) {
    if (!graph.contains(e.src) || !graph.contains(e.dst)) {
      v.push_back("edge " + std::to_string(e.src) + "->" + std::to_string(e.dst) +
                  " references a missing node");
    }
  }
  if (!v.empty()) return report;

  std::vector<NodeId> order;
  try {
    order = graph.topological_order();
  } catch (const GraphError& err) {
    v.push_back(err.what());
    return report;
  }

  // Arity and ordinal checks.
  for (const auto& [id, kind] : graph.nodes()) {
    const auto in = graph.in_edges(id);
    if (holds<op::Input>(kind)) {
      if (id != graph.input_id()) v.push_back(node_label(graph, id) + ": extra Input node");
      if (!in.empty()) v.push_back(node_label(graph, id) + ": Input must have no inbound edges");
    } else if (is_join(kind)) {
      if (in.size() < 2) {
        v.push_back(node_label(graph, id) + ": join needs at least 2 inbound edges, has " +
                    std::to_string(in.size()));
      }
      for (std::size_t i = 0; i < in.size(); ++i) {
        if (in[i].ordinal != static_cast<int>(i)) {
          v.push_back(node_label(graph, id) + ": join ordinals are not contiguous 0..k-1");
          break;
        }
      }
    } else if (in.size() != 1) {
      v.push_back(node_label(graph, id) + (in.empty() ? ": dangling node (no inbound edge)"
                                                      : ": multiple inbound edges on non-join"));
    }
    if (holds<op::Predict>(kind) && !graph.out_edges(id).empty()) {
      v.push_back(node_label(graph, id) + ": Predict must be terminal");
    }
  }

  // Every node must lie on an input→output path.
  std::set<NodeId> from_input{graph.input_id()};
  for (NodeId id : order) {
    if (!from_input.count(id)) continue;
    for (const Edge& e : graph.out_edges(id)) from_input.insert(e.dst);
  }
  std::set<NodeId> to_output{graph.output_id()};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    for (const Edge& e : graph.out_edges(*it)) {
      if (to_output.count(e.dst)) {
        to_output.insert(*it);
        break;
      }
    }
  }
  for (const auto& [id, kind] : graph.nodes()) {
    if (!from_input.count(id) || !to_output.count(id)) {
      v.push_back(node_label(graph, id) + ": dangling node (not on an input-to-output path)");
    }
  }
  if (!v.empty()) return report;

  // Shape inference.
  std::map<NodeId, TensorShape>& shapes = report.shapes;
  for (NodeId id : order) {
    const NodeKind& kind = graph.node(id);
    std::vector<TensorShape> in;
    bool inputs_known = true;
    for (NodeId src : graph.inputs(id)) {
      auto it = shapes.find(src);
      if (it == shapes.end()) {
        inputs_known = false;
        break;
      }
      in.push_back(it->second);
    }
    if (!inputs_known) continue;  // upstream failure already reported
    const std::string where = node_label(graph, id);
    TensorShape out{};
    bool ok = true;
    auto fail = [&](const std::string& msg) {
      v.push_back(where + ": " + msg);
      ok = false;
    };
    std::visit(
        Overloaded{
            [&](const op::Input& n) {
              if (n.shape.channels < 1 || n.shape.height < 1 || n.shape.width < 1) {
                fail("input shape must be positive");
              }
              out = n.shape;
            },
            [&](const op::Conv& n) {
              if (n.kernel != 1 && n.kernel != 3 && n.kernel != 5 && n.kernel != 7) {
                fail("conv kernel must be one of 1,3,5,7");
              }
              if (n.out_channels < 1 || n.stride < 1 || n.pad < 0) fail("bad conv parameters");
              out = {n.out_channels, window_output(in[0].height, n.kernel, n.stride, n.pad),
                     window_output(in[0].width, n.kernel, n.stride, n.pad)};
              if (ok && (out.height < 1 || out.width < 1)) fail("conv output is empty");
            },
            [&](const op::BatchNorm& n) {
              if (!(n.epsilon > 0.0)) fail("batch-norm epsilon must be positive");
              out = in[0];
            },
            [&](const op::Activation&) { out = in[0]; },
            [&](const op::Pool& n) {
              if (n.window < 1 || n.stride < 1) fail("bad pool parameters");
              out = {in[0].channels, window_output(in[0].height, n.window, n.stride, 0),
                     window_output(in[0].width, n.window, n.stride, 0)};
              if (ok && (out.height < 1 || out.width < 1)) fail("pool output is empty");
            },
            [&](const op::Dropout& n) {
              if (!(n.rate >= 0.0 && n.rate < 1.0)) fail("dropout rate must be in [0,1)");
              out = in[0];
            },
            [&](const op::ElementwisePower& n) {
              if (n.exponent < 2) fail("power exponent must be >= 2");
              out = in[0];
            },
            [&](const op::Join& n) {
              if (n.kind == JoinKind::kFreezeDropPath) {
                if (!n.fdp) {
                  fail("freeze-drop-path join without config");
                } else {
                  if (n.fdp->branch_count != static_cast<int>(in.size())) {
                    fail("freeze-drop-path branch_count " + std::to_string(n.fdp->branch_count) +
                         " != inbound edges " + std::to_string(in.size()));
                  }
                  if (n.fdp->num_iter_per_cycle < 1) fail("num_iter_per_cycle must be positive");
                }
              } else if (n.fdp) {
                fail("freeze-drop-path config on a non freeze-drop-path join");
              }
              out = in[0];
              if (n.kind == JoinKind::kConcat) {
                out.channels = 0;
                for (const TensorShape& s : in) {
                  if (s.height != in[0].height || s.width != in[0].width) {
                    fail("shape mismatch at concat join: " + s.to_string() + " vs " +
                         in[0].to_string());
                  }
                  out.channels += s.channels;
                }
              } else {
                for (const TensorShape& s : in) {
                  if (!(s == in[0])) {
                    fail("shape mismatch at " + std::string(join_kind_name(n.kind)) +
                         " join: " + s.to_string() + " vs " + in[0].to_string());
                    break;
                  }
                }
              }
            },
            [&](const op::Predict& n) {
              if (n.classes < 1) fail("predict classes must be positive");
              out = {n.classes, 1, 1};
            },
        },
        kind);
    if (ok) shapes[id] = out;
  }
  if (!v.empty()) {
    shapes.clear();
    return report;
  }
  report.order = std::move(order);
  report.ok = true;
  return report;
}

ValidationReport validate_or_throw(const ArchGraph& graph) {
  ValidationReport report = validate(graph);
  if (!report.ok) {
    std::string msg = "graph '" + graph.name() + "' is invalid:";
    for (const auto& s : report.violations) msg += "\n  " + s;
    throw GraphError(msg);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Path counting

std::map<NodeId, BigInt> path_counts(const ArchGraph& graph) {
  const ValidationReport report = validate_or_throw(graph);
  std::map<NodeId, BigInt> counts;
  for (NodeId id : report.order) {
    if (id == graph.input_id()) {
      counts[id] = 1;
      continue;
    }
    BigInt total = 0;
    for (NodeId src : graph.inputs(id)) total += counts.at(src);
    counts[id] = total;
  }
  return counts;
}

BigInt count_paths(const ArchGraph& graph) { return path_counts(graph).at(graph.output_id()); }

}  // namespace fractal
