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

#include "fixtures.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "fractal/dataset.hpp"
#include "fractal/generators.hpp"
#include "fractal/nn_core.hpp"
#include "fractal/random.hpp"
#include "fractal/rewriter.hpp"
#include "fractal/trainer.hpp"

namespace fractal::fixtures {

NodeId conv(ArchGraph& g, NodeId from, int out, int kernel, int stride) {
  const NodeId id = g.add_node(op::Conv{out, kernel, stride, kernel / 2});
  g.connect(from, id);
  return id;
}

NodeId chain(ArchGraph& g, NodeId from, std::initializer_list<NodeKind> kinds) {
  NodeId node = from;
  for (const NodeKind& k : kinds) {
    const NodeId id = g.add_node(k);
    g.connect(node, id);
    node = id;
  }
  return node;
}

NodeId join(ArchGraph& g, const std::vector<NodeId>& inputs, JoinKind kind) {
  const NodeId id = g.add_node(op::Join{kind, std::nullopt});
  for (NodeId in : inputs) g.connect(in, id);
  return id;
}

ArchGraph begin(const std::string& name, TensorShape shape, NodeId* input) {
  ArchGraph g(name);
  *input = g.add_node(op::Input{shape});
  g.set_input(*input);
  return g;
}

void finish(ArchGraph& g, NodeId from, int classes) {
  const NodeId p = g.add_node(op::Predict{classes});
  g.connect(from, p);
  g.set_output(p);
  validate_or_throw(g);
}

namespace {

NodeId block(ArchGraph& g, NodeId from, int out, int kernel = 3) {
  return add_conv_block(g, from, out, kernel);
}

const op::BatchNorm kBn{};
const op::Activation kRelu{};

}  // namespace

std::vector<Named> sum_graphs() {
  std::vector<Named> out;
  {
    NodeId in = 0;
    ArchGraph g = begin("sum2", {4, 8, 8}, &in);
    const NodeId s = join(g, {conv(g, in, 4), conv(g, in, 4)}, JoinKind::kSum);
    finish(g, chain(g, conv(g, s, 8), {kBn, kRelu, op::Pool{PoolKind::kAvg, 2, 2}}));
    out.push_back({"sum2", std::move(g)});
  }
  {
    NodeId in = 0;
    ArchGraph g = begin("sum3", {4, 8, 8}, &in);
    const NodeId a = block(g, in, 4);
    const NodeId b = conv(g, chain(g, conv(g, in, 4), {kRelu}), 4);
    const NodeId s = join(g, {a, b, in}, JoinKind::kSum);
    finish(g, chain(g, conv(g, s, 6, 1), {kBn, kRelu}));
    out.push_back({"sum3", std::move(g)});
  }
  {
    NodeId in = 0;
    ArchGraph g = begin("sum_nested", {3, 8, 8}, &in);
    const NodeId x = block(g, in, 4);
    const NodeId s1 = join(g, {conv(g, x, 4), conv(g, x, 4, 5)}, JoinKind::kSum);
    const NodeId y = chain(g, conv(g, s1, 5), {kBn, kRelu});
    const NodeId s2 = join(g, {y, conv(g, y, 5)}, JoinKind::kSum);
    const NodeId z = chain(g, conv(g, s2, 6, 5), {kBn, kRelu, op::Pool{PoolKind::kMax, 2, 2}});
    // Sum feeding BatchNorm: not a sum_to_concat target.
    const NodeId s3 = join(g, {conv(g, z, 6), conv(g, z, 6)}, JoinKind::kSum);
    finish(g, chain(g, s3, {kBn, kRelu}));
    out.push_back({"sum_nested", std::move(g)});
  }
  return out;
}

std::vector<Named> mean_bn_graphs() {
  std::vector<Named> out;
  {
    NodeId in = 0;
    ArchGraph g = begin("mean2_bn", {3, 8, 8}, &in);
    const NodeId m = join(g, {block(g, in, 4), block(g, in, 4)}, JoinKind::kMean);
    finish(g, chain(g, m, {kBn, kRelu}));
    out.push_back({"mean2_bn", std::move(g)});
  }
  {
    NodeId in = 0;
    ArchGraph g = begin("mean3_relu_pool_bn", {3, 8, 8}, &in);
    const NodeId m =
        join(g, {conv(g, in, 5), conv(g, in, 5, 5), conv(g, in, 5, 1)}, JoinKind::kMean);
    finish(g, chain(g, m, {kRelu, op::Pool{PoolKind::kMax, 2, 2}, kBn}));
    out.push_back({"mean3_relu_pool_bn", std::move(g)});
  }
  {
    NodeId in = 0;
    ArchGraph g = begin("mean_dropout_avgpool", {3, 8, 8}, &in);
    const NodeId m = join(g, {block(g, in, 4), block(g, in, 4), block(g, in, 4, 5)}, JoinKind::kMean);
    const NodeId bn = chain(g, m, {op::Dropout{0.2}, op::Pool{PoolKind::kAvg, 2, 2}, kBn, kRelu});
    finish(g, chain(g, conv(g, bn, 6), {kBn}));
    out.push_back({"mean_dropout_avgpool", std::move(g)});
  }
  return out;
}

std::vector<Named> skip_graphs() {
  std::vector<Named> out;
  {
    NodeId in = 0;
    ArchGraph g = begin("skip1_append", {3, 8, 8}, &in);
    const NodeId s = conv(g, in, 4);
    const NodeId j = join(g, {conv(g, s, 5), s}, JoinKind::kConcat);
    finish(g, chain(g, conv(g, j, 6), {kBn, kRelu, op::Pool{PoolKind::kMax, 2, 2}}));
    out.push_back({"skip1_append", std::move(g)});
  }
  {
    NodeId in = 0;
    ArchGraph g = begin("skip2_prepend", {3, 8, 8}, &in);
    const NodeId s = conv(g, in, 4);
    const NodeId j = join(g, {s, conv(g, conv(g, s, 4), 6, 5)}, JoinKind::kConcat);
    finish(g, chain(g, conv(g, j, 8), {kBn}));
    out.push_back({"skip2_prepend", std::move(g)});
  }
  {
    NodeId in = 0;
    ArchGraph g = begin("skip_three_way", {3, 8, 8}, &in);
    const NodeId s = chain(g, conv(g, in, 3), {kBn, kRelu});
    const NodeId j = join(g, {conv(g, conv(g, s, 3), 3), s, conv(g, s, 2, 1)}, JoinKind::kConcat);
    finish(g, chain(g, conv(g, j, 8), {kBn, kRelu}));
    out.push_back({"skip_three_way", std::move(g)});
  }
  return out;
}

PruneFixture prune_graph() {
  PruneFixture f;
  NodeId in = 0;
  f.graph = begin("prune3", {3, 8, 8}, &in);
  ArchGraph& g = f.graph;
  f.a = conv(g, in, 3);
  f.b = chain(g, conv(g, in, 4), {kRelu});
  f.c = conv(g, in, 2, 1);
  f.concat = join(g, {f.a, f.b, f.c}, JoinKind::kConcat);
  f.consumer = conv(g, f.concat, 6);
  finish(g, chain(g, f.consumer, {kBn, kRelu}));
  return f;
}

ResidualFixture residual_graph() {
  ResidualFixture f;
  NodeId in = 0;
  f.graph = begin("residual", {3, 8, 8}, &in);
  ArchGraph& g = f.graph;
  f.source = conv(g, in, 4);
  f.sum = join(g, {f.source, conv(g, conv(g, f.source, 4), 4)}, JoinKind::kSum);
  finish(g, chain(g, conv(g, f.sum, 6), {kBn, kRelu, op::Pool{PoolKind::kAvg, 2, 2}}));
  return f;
}

ArchGraph sharing_train_graph() {
  NodeId in = 0;
  ArchGraph g = begin("sharing_train", {3, 8, 8}, &in);
  const NodeId x = block(g, in, 4);
  const NodeId s = join(g, {block(g, x, 4), chain(g, conv(g, x, 4, 1), {kRelu})}, JoinKind::kSum);
  finish(g, chain(g, conv(g, s, 6),
                  {kBn, kRelu, op::Pool{PoolKind::kMax, 2, 2}, op::Dropout{0.1}}));
  return g;
}

namespace {

double weight_gap(const WeightStore& a, const WeightStore& b) {
  double gap = 0.0;
  for (const auto& [id, set] : a.params) {
    for (const auto& [name, t] : set) {
      const Tensor& u = b.param(id, name);
      if (u.same_shape(t)) {
        gap = std::max(gap, max_abs_diff(t, u));
        continue;
      }
      // A widened consumer: every tied slice must equal the original tensor.
      bool matched = false;
      for (const SharingGroup& g : b.groups) {
        for (const SliceRef& s : g.members) {
          if (s.node != id || s.param != name) continue;
          const std::vector<std::size_t> idx = slice_indices(u, s);
          if (idx.size() != t.size()) throw GraphError("slice does not match the original tensor");
          for (std::size_t i = 0; i < idx.size(); ++i) gap = std::max(gap, std::abs(t[i] - u[idx[i]]));
          matched = true;
        }
      }
      if (!matched) throw GraphError("no tied slice covers node " + std::to_string(id) + " " + name);
    }
  }
  return gap;
}

}  // namespace

double sharing_trajectory_gap(int steps, std::uint64_t seed) {
  const ArchGraph g1 = sharing_train_graph();
  WeightStore w1 = init_weights(g1, seed);
  const Rewritten r = sum_to_concat(g1, w1);
  if (r.log.empty()) throw GraphError("sum_to_concat found nothing to rewrite");
  const ArchGraph& g2 = r.graph;
  WeightStore w2 = r.weights;

  const Dataset data = downsample(synthetic_cifar(64, 10, seed), {3, 8, 8});
  Rng rng(mix_seed(seed, 0x7a1ULL));
  double gap = weight_gap(w1, w2);
  for (int t = 0; t < steps; ++t) {
    std::vector<std::size_t> idx(8);
    for (std::size_t& i : idx) i = static_cast<std::size_t>(rng.below(data.size()));
    const Tensor x = data.images(idx);
    const std::vector<int> y = data.labels_of(idx);
    EvalContext ctx;
    ctx.mode = Mode::kTrain;
    ctx.seed = mix_seed(seed, static_cast<std::uint64_t>(t));
    const ForwardPass p1 = forward(g1, w1, x, ctx);
    const ForwardPass p2 = forward(g2, w2, x, ctx);
    const BackwardResult b1 = backward(g1, w1, p1, ctx, loss_softmax_xent(p1.output(), y).grad);
    const BackwardResult b2 = backward(g2, w2, p2, ctx, loss_softmax_xent(p2.output(), y).grad);
    sgd_step(w1, b1.params, 0.05);
    sgd_step(w2, b2.params, 0.05);
    gap = std::max(gap, weight_gap(w1, w2));
  }
  return gap;
}

ArchGraph lint_chain() {
  NodeId in = 0;
  ArchGraph g = begin("lint_chain", {3, 16, 16}, &in);
  NodeId x = chain(g, block(g, in, 8), {op::Pool{PoolKind::kMax, 2, 2}});
  x = block(g, x, 16);
  finish(g, x);
  return g;
}

ArchGraph lint_long_skip() {
  NodeId in = 0;
  ArchGraph g = begin("lint_long_skip", {3, 8, 8}, &in);
  const NodeId s = block(g, in, 8);
  NodeId x = s;
  for (int i = 0; i < 64; ++i) x = block(g, x, 8);
  x = join(g, {x, s}, JoinKind::kSum);
  for (int i = 0; i < 63; ++i) x = block(g, x, 8);
  finish(g, x);
  return g;
}

ArchGraph lint_missing_bn() {
  NodeId in = 0;
  ArchGraph g = begin("lint_missing_bn", {3, 16, 16}, &in);
  const NodeId x = block(g, in, 8);
  const NodeId bare = chain(g, conv(g, x, 8), {kRelu});
  const NodeId j = join(g, {block(g, x, 8), bare}, JoinKind::kConcat);
  finish(g, chain(g, j, {op::Pool{PoolKind::kMax, 2, 2}}));
  return g;
}

ArchGraph lint_narrow_input() {
  NodeId in = 0;
  ArchGraph g = begin("lint_narrow_input", {3, 16, 16}, &in);
  const NodeId x = block(g, in, 2);
  const NodeId j = join(g, {block(g, x, 4), block(g, x, 4)}, JoinKind::kConcat);
  finish(g, chain(g, j, {op::Pool{PoolKind::kMax, 2, 2}}));
  return g;
}

ArchGraph random_graph(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x9a7ULL));
  NodeId in = 0;
  const int c0 = 2 + static_cast<int>(rng.below(2));
  ArchGraph g = begin("random_" + std::to_string(seed), {c0, 8, 8}, &in);
  NodeId x = in;
  int channels = c0;
  int size = 8;
  const int stages = 1 + static_cast<int>(rng.below(3));
  const JoinKind kinds[] = {JoinKind::kSum, JoinKind::kMean, JoinKind::kConcat, JoinKind::kMaxout};
  for (int s = 0; s < stages; ++s) {
    const int width = 2 + static_cast<int>(rng.below(4));
    const int k = 2 + static_cast<int>(rng.below(2));
    std::vector<NodeId> branches;
    for (int b = 0; b < k; ++b) {
      if (b == k - 1 && width == channels && rng.bernoulli(0.4)) {
        branches.push_back(x);  // identity skip
        continue;
      }
      NodeId y = x;
      const int depth = 1 + static_cast<int>(rng.below(2));
      for (int d = 0; d < depth; ++d) {
        const int kernel = rng.bernoulli(0.3) ? 1 : 3;
        y = rng.bernoulli(0.7) ? block(g, y, width, kernel) : conv(g, y, width, kernel);
      }
      branches.push_back(y);
    }
    const JoinKind kind = kinds[rng.below(4)];
    x = join(g, branches, kind);
    channels = kind == JoinKind::kConcat ? width * k : width;
    if (size >= 4 && rng.bernoulli(0.5)) {
      x = chain(g, x, {op::Pool{rng.bernoulli(0.5) ? PoolKind::kMax : PoolKind::kAvg, 2, 2}});
      size /= 2;
    }
    if (rng.bernoulli(0.3)) x = chain(g, x, {op::Dropout{0.2}});
    if (rng.bernoulli(0.3)) x = chain(g, x, {op::ElementwisePower{2}});
  }
  finish(g, x, 3 + static_cast<int>(rng.below(5)));
  return g;
}

Tensor random_input(const ArchGraph& graph, int batch, std::uint64_t seed) {
  const TensorShape s = std::get<op::Input>(graph.node(graph.input_id())).shape;
  Tensor x({batch, s.channels, s.height, s.width});
  Rng rng(mix_seed(seed, 0x1a9ULL));
  for (double& v : x.data()) v = rng.normal();
  return x;
}

std::vector<int> random_labels(int batch, int classes, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x1abULL));
  std::vector<int> y(static_cast<std::size_t>(batch));
  for (int& l : y) l = static_cast<int>(rng.below(static_cast<std::uint64_t>(classes)));
  return y;
}

void perturb_bn(const ArchGraph& graph, WeightStore& weights, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0xb11ULL));
  for (const auto& [id, kind] : graph.nodes()) {
    if (!holds<op::BatchNorm>(kind)) continue;
    for (double& v : weights.param(id, kGamma).data()) v = rng.uniform(0.5, 1.5);
    for (double& v : weights.param(id, kBeta).data()) v = rng.uniform(-0.5, 0.5);
    BnStatistics& st = weights.bn_stats.at(id);
    for (double& m : st.mean) m = rng.uniform(-0.5, 0.5);
    for (double& v : st.var) v = rng.uniform(0.5, 2.0);
  }
}

std::uint64_t enumerate_paths(const ArchGraph& graph) {
  std::uint64_t count = 0;
  std::function<void(NodeId)> walk = [&](NodeId n) {
    if (n == graph.output_id()) {
      ++count;
      return;
    }
    for (const Edge& e : graph.out_edges(n)) walk(e.dst);
  };
  walk(graph.input_id());
  return count;
}

}  // namespace fractal::fixtures
