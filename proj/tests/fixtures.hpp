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

// Hand-built graphs shared by the unit tests and the acceptance runner.

#ifndef FRACTAL_TESTS_FIXTURES_HPP_
#define FRACTAL_TESTS_FIXTURES_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "fractal/graph_ir.hpp"
#include "fractal/tensor.hpp"
#include "fractal/weights.hpp"

namespace fractal::fixtures {

struct Named {
  std::string name;
  ArchGraph graph;
};

/// Builder helpers that return the new node id.
NodeId conv(ArchGraph& g, NodeId from, int out, int kernel = 3, int stride = 1);
NodeId chain(ArchGraph& g, NodeId from, std::initializer_list<NodeKind> kinds);
NodeId join(ArchGraph& g, const std::vector<NodeId>& inputs, JoinKind kind);
ArchGraph begin(const std::string& name, TensorShape shape, NodeId* input);
void finish(ArchGraph& g, NodeId from, int classes = 10);

/// Sum joins whose single consumer is a Conv (sum_to_concat targets).
std::vector<Named> sum_graphs();
/// Mean joins reaching a BatchNorm through ReLU/Pool/Dropout.
std::vector<Named> mean_bn_graphs();
/// Concat joins with a skip beside a stride-1 Conv chain.
std::vector<Named> skip_graphs();

/// Input -> {A, B, C} -> Concat -> Conv consumer -> BN -> ReLU -> Predict.
struct PruneFixture {
  ArchGraph graph;
  NodeId a = -1, b = -1, c = -1, concat = -1, consumer = -1;
};
PruneFixture prune_graph();

/// Residual-style graph: x -> Conv -> Conv, Sum(x, chain) -> Conv -> ...
struct ResidualFixture {
  ArchGraph graph;
  NodeId source = -1, sum = -1;
};
ResidualFixture residual_graph();

/// Sum-join graph used for the weight-sharing training trajectory check.
ArchGraph sharing_train_graph();

/// Trains sharing_train_graph() and its sum_to_concat rewrite side by side
/// for `steps` SGD steps on identical minibatches and contexts. Returns the
/// largest difference between corresponding weights over the whole
/// trajectory; each tied slice of the rewritten consumer is compared with the
/// original filter.
double sharing_trajectory_gap(int steps, std::uint64_t seed);

// Linter fixtures.
ArchGraph lint_chain();             // no branches: fails P2 only
ArchGraph lint_long_skip();         // 64-block bypass in depth 128: fails P8 only
ArchGraph lint_missing_bn();        // one Conv without BatchNorm: fails P9 only
ArchGraph lint_narrow_input();      // 3 -> 2 first layer: fails P10 only

/// Random small DAG (Conv blocks, pools, joins of every kind but FDP).
ArchGraph random_graph(std::uint64_t seed);

/// Seeded standard-normal batch shaped for `graph`'s input.
Tensor random_input(const ArchGraph& graph, int batch, std::uint64_t seed);
std::vector<int> random_labels(int batch, int classes, std::uint64_t seed);

/// Gives BatchNorm layers non-trivial affine parameters and statistics so
/// eval-mode tests exercise them.
void perturb_bn(const ArchGraph& graph, WeightStore& weights, std::uint64_t seed);

/// Distinct input-to-output paths by explicit depth-first enumeration.
std::uint64_t enumerate_paths(const ArchGraph& graph);

}  // namespace fractal::fixtures

#endif  // FRACTAL_TESTS_FIXTURES_HPP_
