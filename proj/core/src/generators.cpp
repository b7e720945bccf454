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

#include "fractal/generators.hpp"

#include <functional>
#include <string>

namespace fractal {

namespace {

// Builds the fractal column pattern shared by the module (blocks are conv
// blocks) and the meta-architecture (blocks are modules plus pools). Column
// c has 2^(c-1) blocks of span 2^(columns-c) depth units. When several
// columns end at the same depth their outputs meet in one join whose inputs
// are listed shallowest column first.
using BlockFn = std::function<NodeId(ArchGraph&, NodeId from, int column, int start, int span)>;
using JoinFn = std::function<NodeId(ArchGraph&, const std::vector<NodeId>& inputs, bool bottom)>;

NodeId expand_columns(ArchGraph& graph, NodeId from, int columns, const BlockFn& block,
                      const JoinFn& join) {
  const int depth = 1 << (columns - 1);
  std::vector<NodeId> head(static_cast<std::size_t>(columns) + 1, from);
  for (int d = 1; d <= depth; ++d) {
    std::vector<NodeId> outputs;
    std::vector<int> ended;
    for (int c = 1; c <= columns; ++c) {
      const int span = 1 << (columns - c);
      if (d % span != 0) continue;
      outputs.push_back(block(graph, head[static_cast<std::size_t>(c)], c, d - span, span));
      ended.push_back(c);
    }
    NodeId next = outputs.front();
    if (outputs.size() > 1) next = join(graph, outputs, d == depth);
    for (int c : ended) head[static_cast<std::size_t>(c)] = next;
  }
  return head[1];
}

NodeId add_join(ArchGraph& graph, const std::vector<NodeId>& inputs, JoinKind kind) {
  const NodeId j = graph.add_node(op::Join{kind, std::nullopt});
  for (NodeId in : inputs) graph.connect(in, j);
  return j;
}

NodeId add_fdp_join(ArchGraph& graph, const std::vector<NodeId>& inputs,
                    FreezeDropPathConfig config) {
  config.branch_count = static_cast<int>(inputs.size());
  const NodeId j = graph.add_node(op::Join{JoinKind::kFreezeDropPath, config});
  for (NodeId in : inputs) graph.connect(in, j);
  return j;
}

ArchGraph start_graph(const std::string& name, TensorShape shape, NodeId* input) {
  ArchGraph graph(name);
  *input = graph.add_node(op::Input{shape});
  graph.set_input(*input);
  return graph;
}

NodeId finish_graph(ArchGraph& graph, NodeId from, int classes) {
  const NodeId predict = graph.add_node(op::Predict{classes});
  graph.connect(from, predict);
  graph.set_output(predict);
  return predict;
}

enum class BottomStyle { kPlain, kBoosting, kTaylor };

ArchGraph build_fof(const FoFSpec& spec, const std::string& name, BottomStyle style) {
  spec.check();
  const FractalSpec& m = spec.module;
  NodeId input = 0;
  ArchGraph graph = start_graph(name, m.input_shape, &input);

  BlockFn block = [&](ArchGraph& g, NodeId from, int, int start, int span) {
    const int last = start + span - 1;
    NodeId node = add_fractal_module(g, from, m.columns, m.module_channels[static_cast<std::size_t>(last)],
                                     {.kernels = {}, .inner_join = JoinKind::kMean,
                                      .bottom_join = m.downsample_join});
    for (int i = 0; i < span; ++i) {
      const NodeId pool = g.add_node(op::Pool{m.pool_kind, 2, 2});
      g.connect(node, pool);
      node = pool;
    }
    const NodeId drop = g.add_node(op::Dropout{m.dropout_rates[static_cast<std::size_t>(last)]});
    g.connect(node, drop);
    return drop;
  };
  JoinFn join = [&](ArchGraph& g, const std::vector<NodeId>& inputs, bool bottom) {
    if (!bottom || style == BottomStyle::kPlain) {
      if (bottom && spec.bottom_join == JoinKind::kFreezeDropPath) {
        return add_fdp_join(g, inputs, spec.fdp);
      }
      return add_join(g, inputs, JoinKind::kMean);
    }
    // Column 1 against the combined deeper columns.
    std::vector<NodeId> deeper(inputs.begin() + 1, inputs.end());
    NodeId combined = deeper.size() > 1 ? add_join(g, deeper, JoinKind::kMean) : deeper.front();
    if (style == BottomStyle::kTaylor) {
      const NodeId power = g.add_node(op::ElementwisePower{2});
      g.connect(combined, power);
      combined = power;
    }
    return add_fdp_join(g, {inputs.front(), combined}, spec.fdp);
  };

  const NodeId bottom = expand_columns(graph, input, spec.meta_columns, block, join);
  const NodeId pool = graph.add_node(op::Pool{m.pool_kind, 2, 2});
  graph.connect(bottom, pool);
  finish_graph(graph, pool, m.classes);
  validate_or_throw(graph);
  return graph;
}

}  // namespace

FractalSpec FractalSpec::desk() {
  FractalSpec spec;
  spec.module_channels = {8, 16, 32};
  spec.input_shape = {3, 16, 16};
  spec.dropout_rates = {0.0, 0.1, 0.2};
  return spec;
}

void FractalSpec::check() const {
  if (columns < 1) throw GraphError("columns must be >= 1, got " + std::to_string(columns));
  if (module_channels.empty()) throw GraphError("at least one module stage is required");
  if (module_channels.size() != dropout_rates.size()) {
    throw GraphError("module_channels and dropout_rates must have the same length");
  }
  for (int c : module_channels) {
    if (c < 1) throw GraphError("module channels must be positive");
  }
  for (double r : dropout_rates) {
    if (!(r >= 0.0 && r < 1.0)) throw GraphError("dropout rates must lie in [0,1)");
  }
  if (classes < 1) throw GraphError("classes must be positive");
  if (input_shape.channels < 1 || input_shape.height < 1 || input_shape.width < 1) {
    throw GraphError("input shape must be positive");
  }
  if (downsample_join != JoinKind::kMean && downsample_join != JoinKind::kConcat) {
    throw GraphError("downsample_join must be mean or concat");
  }
}

FoFSpec FoFSpec::desk() {
  FoFSpec spec;
  spec.module.module_channels = {4, 4, 8, 8};
  spec.module.input_shape = {3, 32, 32};
  spec.module.dropout_rates = {0.0, 0.1, 0.2, 0.3};
  return spec;
}

void FoFSpec::check() const {
  module.check();
  if (meta_columns < 2 || meta_columns > 5) {
    throw GraphError("meta_columns must be in [2,5], got " + std::to_string(meta_columns));
  }
  if (static_cast<int>(module.module_channels.size()) < levels()) {
    throw GraphError("FoF with " + std::to_string(meta_columns) + " meta-columns needs " +
                     std::to_string(levels()) + " module channel entries");
  }
  const int factor = 1 << (levels() + 1);
  if (module.input_shape.height < factor || module.input_shape.width < factor ||
      module.input_shape.height % factor != 0 || module.input_shape.width % factor != 0) {
    throw GraphError("FoF input spatial size must be a multiple of " + std::to_string(factor) +
                     ", got " + std::to_string(module.input_shape.height) + "x" +
                     std::to_string(module.input_shape.width));
  }
  if (bottom_join != JoinKind::kMean && bottom_join != JoinKind::kFreezeDropPath) {
    throw GraphError("FoF bottom join must be mean or freeze-drop-path");
  }
}

NodeId add_conv_block(ArchGraph& graph, NodeId from, int out_channels, int kernel) {
  const NodeId conv = graph.add_node(op::Conv{out_channels, kernel, 1, kernel / 2});
  graph.connect(from, conv);
  const NodeId bn = graph.add_node(op::BatchNorm{});
  graph.connect(conv, bn);
  const NodeId relu = graph.add_node(op::Activation{});
  graph.connect(bn, relu);
  return relu;
}

NodeId add_fractal_module(ArchGraph& graph, NodeId from, int columns, int out_channels,
                          const ModuleOptions& options) {
  if (columns < 1) throw GraphError("columns must be >= 1, got " + std::to_string(columns));
  if (!options.kernels.empty() && static_cast<int>(options.kernels.size()) != columns) {
    throw GraphError("kernels-per-column must list one kernel per column");
  }
  BlockFn block = [&](ArchGraph& g, NodeId src, int column, int, int) {
    const int kernel =
        options.kernels.empty() ? 3 : options.kernels[static_cast<std::size_t>(column - 1)];
    return add_conv_block(g, src, out_channels, kernel);
  };
  JoinFn join = [&](ArchGraph& g, const std::vector<NodeId>& inputs, bool bottom) {
    return add_join(g, inputs, bottom ? options.bottom_join : options.inner_join);
  };
  return expand_columns(graph, from, columns, block, join);
}

ArchGraph gen_fractal_module(int columns, TensorShape in_shape, int out_channels,
                             const std::vector<int>& kernels, int classes, JoinKind join) {
  NodeId input = 0;
  ArchGraph graph = start_graph("fractal_module_c" + std::to_string(columns), in_shape, &input);
  const NodeId out = add_fractal_module(graph, input, columns, out_channels,
                                        {.kernels = kernels, .inner_join = join, .bottom_join = join});
  finish_graph(graph, out, classes);
  validate_or_throw(graph);
  return graph;
}

ArchGraph gen_fractalnet(const FractalSpec& spec) {
  spec.check();
  const int stages = static_cast<int>(spec.module_channels.size());
  const int factor = 1 << stages;
  if (spec.input_shape.height % factor != 0 || spec.input_shape.width % factor != 0) {
    throw GraphError("input spatial size " + std::to_string(spec.input_shape.height) + "x" +
                     std::to_string(spec.input_shape.width) + " is not divisible by 2^" +
                     std::to_string(stages));
  }
  NodeId node = 0;
  ArchGraph graph = start_graph("fractalnet", spec.input_shape, &node);
  for (int s = 0; s < stages; ++s) {
    const auto su = static_cast<std::size_t>(s);
    node = add_fractal_module(graph, node, spec.columns, spec.module_channels[su],
                              {.kernels = {}, .inner_join = JoinKind::kMean,
                               .bottom_join = spec.downsample_join});
    const NodeId pool = graph.add_node(op::Pool{spec.pool_kind, 2, 2});
    graph.connect(node, pool);
    const NodeId drop = graph.add_node(op::Dropout{spec.dropout_rates[su]});
    graph.connect(pool, drop);
    node = drop;
  }
  finish_graph(graph, node, spec.classes);
  validate_or_throw(graph);
  return graph;
}

ArchGraph gen_fof(const FoFSpec& spec) {
  return build_fof(spec, spec.bottom_join == JoinKind::kFreezeDropPath ? "fof_fdp" : "fof",
                   BottomStyle::kPlain);
}

ArchGraph gen_sbn(const FoFSpec& spec) { return build_fof(spec, "sbn", BottomStyle::kBoosting); }

ArchGraph gen_tsn(const FoFSpec& spec) { return build_fof(spec, "tsn", BottomStyle::kTaylor); }

}  // namespace fractal
