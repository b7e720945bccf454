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

// JSON graph schema (version 1) and DOT export. The layout is documented in
// docs/graph_schema.md.

#include <sstream>

#include "fractal/graph_ir.hpp"
#include "json.hpp"

namespace fractal {

namespace {

using nlohmann::json;

json fdp_to_json(const FreezeDropPathConfig& c) {
  return json{{"mode", c.mode == FdpMode::kStochastic ? "stochastic" : "deterministic"},
              {"num_iter_per_cycle", c.num_iter_per_cycle},
              {"interval", c.interval == FdpInterval::kSquare ? "square" : "equal"},
              {"branch_count", c.branch_count}};
}

json node_to_json(NodeId id, const NodeKind& kind) {
  json j;
  j["id"] = id;
  j["kind"] = std::string(kind_name(kind));
  if (const auto* n = std::get_if<op::Input>(&kind)) {
    j["shape"] = {{"channels", n->shape.channels},
                  {"height", n->shape.height},
                  {"width", n->shape.width}};
  } else if (const auto* n = std::get_if<op::Conv>(&kind)) {
    j["out_channels"] = n->out_channels;
    j["kernel"] = n->kernel;
    j["stride"] = n->stride;
    j["pad"] = n->pad;
  } else if (const auto* n = std::get_if<op::BatchNorm>(&kind)) {
    j["epsilon"] = n->epsilon;
  } else if (std::holds_alternative<op::Activation>(kind)) {
    j["activation"] = "relu";
  } else if (const auto* n = std::get_if<op::Pool>(&kind)) {
    j["pool"] = n->kind == PoolKind::kMax ? "max" : "avg";
    j["window"] = n->window;
    j["stride"] = n->stride;
  } else if (const auto* n = std::get_if<op::Dropout>(&kind)) {
    j["rate"] = n->rate;
  } else if (const auto* n = std::get_if<op::ElementwisePower>(&kind)) {
    j["exponent"] = n->exponent;
  } else if (const auto* n = std::get_if<op::Join>(&kind)) {
    j["join"] = std::string(join_kind_name(n->kind));
    if (n->fdp) j["freeze_drop_path"] = fdp_to_json(*n->fdp);
  } else if (const auto* n = std::get_if<op::Predict>(&kind)) {
    j["classes"] = n->classes;
  }
  return j;
}

template <typename T>
T field(const json& j, const char* key) {
  if (!j.contains(key)) throw GraphError(std::string("missing field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw GraphError(std::string("field '") + key + "' has the wrong type");
  }
}

FreezeDropPathConfig fdp_from_json(const json& j) {
  FreezeDropPathConfig c;
  const auto mode = field<std::string>(j, "mode");
  if (mode == "stochastic") {
    c.mode = FdpMode::kStochastic;
  } else if (mode == "deterministic") {
    c.mode = FdpMode::kDeterministic;
  } else {
    throw GraphError("unknown freeze-drop-path mode '" + mode + "'");
  }
  const auto interval = field<std::string>(j, "interval");
  if (interval == "square") {
    c.interval = FdpInterval::kSquare;
  } else if (interval == "equal") {
    c.interval = FdpInterval::kEqual;
  } else {
    throw GraphError("unknown freeze-drop-path interval '" + interval + "'");
  }
  c.num_iter_per_cycle = field<int>(j, "num_iter_per_cycle");
  c.branch_count = field<int>(j, "branch_count");
  return c;
}

NodeKind node_from_json(const json& j) {
  const auto kind = field<std::string>(j, "kind");
  if (kind == "input") {
    const json& s = j.at("shape");
    return op::Input{{field<int>(s, "channels"), field<int>(s, "height"), field<int>(s, "width")}};
  }
  if (kind == "conv") {
    return op::Conv{field<int>(j, "out_channels"), field<int>(j, "kernel"),
                    field<int>(j, "stride"), field<int>(j, "pad")};
  }
  if (kind == "batch_norm") return op::BatchNorm{field<double>(j, "epsilon")};
  if (kind == "activation") {
    const auto act = field<std::string>(j, "activation");
    if (act != "relu") throw GraphError("unknown activation '" + act + "'");
    return op::Activation{};
  }
  if (kind == "pool") {
    const auto pool = field<std::string>(j, "pool");
    if (pool != "max" && pool != "avg") throw GraphError("unknown pool kind '" + pool + "'");
    return op::Pool{pool == "max" ? PoolKind::kMax : PoolKind::kAvg, field<int>(j, "window"),
                    field<int>(j, "stride")};
  }
  if (kind == "dropout") return op::Dropout{field<double>(j, "rate")};
  if (kind == "power") return op::ElementwisePower{field<int>(j, "exponent")};
  if (kind == "join") {
    const auto name = field<std::string>(j, "join");
    op::Join join;
    if (name == "sum") {
      join.kind = JoinKind::kSum;
    } else if (name == "mean") {
      join.kind = JoinKind::kMean;
    } else if (name == "concat") {
      join.kind = JoinKind::kConcat;
    } else if (name == "maxout") {
      join.kind = JoinKind::kMaxout;
    } else if (name == "freeze_drop_path") {
      join.kind = JoinKind::kFreezeDropPath;
      join.fdp = fdp_from_json(j.at("freeze_drop_path"));
    } else {
      throw GraphError("unknown join kind '" + name + "'");
    }
    return join;
  }
  if (kind == "predict") return op::Predict{field<int>(j, "classes")};
  throw GraphError("schema error: unknown node kind '" + kind + "'");
}

std::string dot_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out;
}

}  // namespace

std::string serialize(const ArchGraph& graph) {
  validate_or_throw(graph);
  ArchGraph canon = graph;
  canon.canonicalize_edges();

  json j;
  j["schema_version"] = kGraphSchemaVersion;
  j["name"] = canon.name();
  j["input"] = canon.input_id();
  j["output"] = canon.output_id();
  json nodes = json::array();
  for (const auto& [id, kind] : canon.nodes()) nodes.push_back(node_to_json(id, kind));
  j["nodes"] = std::move(nodes);
  json edges = json::array();
  for (const Edge& e : canon.edges()) {
    edges.push_back({{"src", e.src}, {"dst", e.dst}, {"ordinal", e.ordinal}});
  }
  j["edges"] = std::move(edges);
  return j.dump(1) + "\n";
}

ArchGraph deserialize(std::string_view text) {
  json j;
  try {
    j = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& err) {
    throw GraphError(std::string("malformed graph JSON: ") + err.what());
  }
  if (!j.is_object()) throw GraphError("malformed graph JSON: top level is not an object");
  const int version = field<int>(j, "schema_version");
  if (version != kGraphSchemaVersion) {
    throw GraphError("schema version mismatch: got " + std::to_string(version) + ", expected " +
                     std::to_string(kGraphSchemaVersion));
  }
  ArchGraph graph(field<std::string>(j, "name"));
  try {
    for (const json& n : j.at("nodes")) graph.insert_node(field<int>(n, "id"), node_from_json(n));
    for (const json& e : j.at("edges")) {
      graph.add_edge({field<int>(e, "src"), field<int>(e, "dst"), field<int>(e, "ordinal")});
    }
  } catch (const json::exception& err) {
    throw GraphError(std::string("malformed graph JSON: ") + err.what());
  }
  graph.set_input(field<int>(j, "input"));
  graph.set_output(field<int>(j, "output"));
  graph.canonicalize_edges();
  return graph;
}

std::string to_dot(const ArchGraph& graph) {
  std::ostringstream os;
  os << "digraph \"" << dot_escape(graph.name()) << "\" {\n";
  os << "  rankdir=TB;\n  node [shape=box, style=rounded];\n";
  for (const auto& [id, kind] : graph.nodes()) {
    os << "  n" << id << " [label=\"" << id << ": " << dot_escape(describe(kind)) << "\"";
    if (is_join(kind)) {
      os << ", shape=trapezium";
    } else if (holds<op::Pool>(kind)) {
      os << ", style=filled, fillcolor=yellow";
    } else if (holds<op::Predict>(kind)) {
      os << ", style=filled, fillcolor=lightblue";
    }
    os << "];\n";
  }
  ArchGraph canon = graph;
  canon.canonicalize_edges();
  for (const Edge& e : canon.edges()) {
    os << "  n" << e.src << " -> n" << e.dst;
    if (is_join(graph.node(e.dst))) os << " [label=\"" << e.ordinal << "\"]";
    os << ";\n";
  }
  os << "}\n";
  return os.str();
}

}  // namespace fractal
