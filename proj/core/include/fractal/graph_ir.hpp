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

#ifndef FRACTAL_GRAPH_IR_HPP_
#define FRACTAL_GRAPH_IR_HPP_

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

namespace fractal {

using NodeId = int;
using BigInt = boost::multiprecision::cpp_int;

/// Raised for structural problems with an ArchGraph (bad ids, invalid
/// construction requests, failed validation where a valid graph is required).
class GraphError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TensorShape {
  int channels = 1;
  int height = 1;
  int width = 1;

  bool operator==(const TensorShape&) const = default;
  std::string to_string() const;
};

enum class PoolKind { kMax, kAvg };
enum class ActivationKind { kRelu };
enum class JoinKind { kSum, kMean, kConcat, kMaxout, kFreezeDropPath };

enum class FdpMode { kStochastic, kDeterministic };
enum class FdpInterval { kSquare, kEqual };

/// Parameters of a freeze-drop-path join. Branch ordinal 0 is the first
/// inbound edge of the join ("branch 1").
struct FreezeDropPathConfig {
  FdpMode mode = FdpMode::kStochastic;
  int num_iter_per_cycle = 100;
  FdpInterval interval = FdpInterval::kSquare;
  int branch_count = 2;

  bool operator==(const FreezeDropPathConfig&) const = default;
};

namespace op {

struct Input {
  TensorShape shape;
  bool operator==(const Input&) const = default;
};

struct Conv {
  int out_channels = 1;
  int kernel = 3;
  int stride = 1;
  int pad = 1;
  bool operator==(const Conv&) const = default;
};

struct BatchNorm {
  double epsilon = 1e-5;
  bool operator==(const BatchNorm&) const = default;
};

struct Activation {
  ActivationKind kind = ActivationKind::kRelu;
  bool operator==(const Activation&) const = default;
};

struct Pool {
  PoolKind kind = PoolKind::kMax;
  int window = 2;
  int stride = 2;
  bool operator==(const Pool&) const = default;
};

struct Dropout {
  double rate = 0.0;
  bool operator==(const Dropout&) const = default;
};

struct ElementwisePower {
  int exponent = 2;
  bool operator==(const ElementwisePower&) const = default;
};

struct Join {
  JoinKind kind = JoinKind::kMean;
  std::optional<FreezeDropPathConfig> fdp;  // set iff kind == kFreezeDropPath
  bool operator==(const Join&) const = default;
};

/// Global average pool, fully connected layer, class scores.
struct Predict {
  int classes = 10;
  bool operator==(const Predict&) const = default;
};

}  // namespace op

using NodeKind = std::variant<op::Input, op::Conv, op::BatchNorm, op::Activation,
                              op::Pool, op::Dropout, op::ElementwisePower,
                              op::Join, op::Predict>;

/// Short lower-case tag for a node kind ("conv", "join", ...). Used by the
/// JSON schema and diagnostics.
std::string_view kind_name(const NodeKind& kind);
std::string_view join_kind_name(JoinKind kind);
std::string describe(const NodeKind& kind);

template <typename T>
bool holds(const NodeKind& kind) {
  return std::holds_alternative<T>(kind);
}

bool is_join(const NodeKind& kind);
bool is_join(const NodeKind& kind, JoinKind which);
bool has_parameters(const NodeKind& kind);

struct Edge {
  NodeId src = 0;
  NodeId dst = 0;
  int ordinal = 0;

  bool operator==(const Edge&) const = default;
  auto operator<=>(const Edge&) const = default;
};

/// Directed acyclic computation graph. Node ids are dense in generation
/// order for generated graphs; rewrites keep ids stable and allocate new
/// ones past the current maximum.
class ArchGraph {
 public:
  ArchGraph() = default;
  explicit ArchGraph(std::string name) : name_(std::move(name)) {}

  const std::string& name() const { return name_; }
  void set_name(std::string name) { name_ = std::move(name); }

  NodeId add_node(NodeKind kind);
  /// Adds a node with an explicit id (deserialization). Throws on reuse.
  void insert_node(NodeId id, NodeKind kind);
  void remove_node(NodeId id);  // also removes incident edges

  /// Appends an edge with ordinal = current inbound count of `dst`.
  void connect(NodeId src, NodeId dst);
  void add_edge(Edge edge);
  void remove_edge(NodeId src, NodeId dst, int ordinal);
  /// Renumbers a join's inbound ordinals to 0..k-1 preserving order.
  void compact_ordinals(NodeId dst);

  bool contains(NodeId id) const { return nodes_.count(id) != 0; }
  const NodeKind& node(NodeId id) const;
  NodeKind& node(NodeId id);
  const std::map<NodeId, NodeKind>& nodes() const { return nodes_; }
  const std::vector<Edge>& edges() const { return edges_; }
  std::size_t size() const { return nodes_.size(); }
  NodeId next_id() const;

  /// Inbound sources sorted by ordinal.
  std::vector<NodeId> inputs(NodeId dst) const;
  std::vector<Edge> in_edges(NodeId dst) const;
  std::vector<Edge> out_edges(NodeId src) const;
  std::vector<NodeId> consumers(NodeId src) const;

  NodeId input_id() const { return input_id_; }
  NodeId output_id() const { return output_id_; }
  void set_input(NodeId id) { input_id_ = id; }
  void set_output(NodeId id) { output_id_ = id; }

  /// Kahn topological order with smallest-id tie-break. Throws GraphError on
  /// a cycle.
  std::vector<NodeId> topological_order() const;

  /// Structural equality: same name, nodes, endpoints and edge multiset.
  bool operator==(const ArchGraph& other) const;

  /// Sorts edges by (dst, ordinal); serialization and equality use this order.
  void canonicalize_edges();

 private:
  std::string name_;
  std::map<NodeId, NodeKind> nodes_;
  std::vector<Edge> edges_;
  NodeId input_id_ = -1;
  NodeId output_id_ = -1;
};

struct ValidationReport {
  bool ok = false;
  std::vector<std::string> violations;
  std::map<NodeId, TensorShape> shapes;  // filled on success
  std::vector<NodeId> order;             // topological order on success

  const TensorShape& shape(NodeId id) const;
};

/// Checks DAG structure, inbound-edge arity, join ordinals, reachability and
/// infers every node's output shape.
ValidationReport validate(const ArchGraph& graph);

/// validate() that throws GraphError listing violations on failure.
ValidationReport validate_or_throw(const ArchGraph& graph);

/// Removes every node (other than the input) with no path to the output
/// and returns the removed ids in ascending order.
std::vector<NodeId> remove_dead_nodes(ArchGraph& graph);

/// Output size of a sliding window along one spatial dimension.
int window_output(int in, int window, int stride, int pad);

/// Number of distinct directed input→output paths (DAG dynamic programming).
BigInt count_paths(const ArchGraph& graph);

/// Path counts from the input to every node.
std::map<NodeId, BigInt> path_counts(const ArchGraph& graph);

inline constexpr int kGraphSchemaVersion = 1;

/// Canonical JSON text (sorted keys, nodes in id order, edges sorted).
std::string serialize(const ArchGraph& graph);
/// Parses the JSON schema; throws GraphError on malformed input, unknown
/// kinds or version mismatch. The result is not validated.
ArchGraph deserialize(std::string_view text);
std::string to_dot(const ArchGraph& graph);

}  // namespace fractal

#endif  // FRACTAL_GRAPH_IR_HPP_
