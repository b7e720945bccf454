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

#ifndef FRACTAL_NN_CORE_HPP_
#define FRACTAL_NN_CORE_HPP_

#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <stdexcept>
#include <vector>

#include "fractal/graph_ir.hpp"
#include "fractal/tensor.hpp"
#include "fractal/weights.hpp"

namespace fractal {

class EvalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Mode {
  kTrain,      // dropout, drop-path and freeze masks active; BN uses batch statistics
  kEval,       // everything deterministic; BN uses stored statistics
  kCalibrate,  // eval-style masks, BN uses (and records) batch statistics
};

struct EvalContext {
  Mode mode = Mode::kEval;
  std::uint64_t seed = 0;
  /// Join id → alive flag per inbound ordinal. Only Mean and
  /// freeze-drop-path joins may appear. Missing joins are fully alive.
  std::map<NodeId, std::vector<bool>> alive;
  /// Nodes whose parameters receive zero gradient.
  std::set<NodeId> frozen;

  bool masks_active() const { return mode == Mode::kTrain; }
  bool branch_alive(NodeId join, int ordinal) const;
  bool is_frozen(NodeId node) const { return masks_active() && frozen.count(node) != 0; }
  std::uint64_t fingerprint() const;
};

struct BnCache {
  Tensor normalized;  // x-hat
  std::vector<double> mean;
  std::vector<double> var;
  std::vector<double> inv_std;
  bool batch_statistics = false;
};

/// Values and backward caches of one forward evaluation. Nodes absent from
/// `values` were not live (every path to the output was dropped).
struct ForwardPass {
  std::map<NodeId, Tensor> values;
  std::map<NodeId, BnCache> batch_norm;
  std::map<NodeId, std::vector<double>> dropout_scale;
  std::map<NodeId, std::vector<std::uint32_t>> argmax;  // max pool / maxout routing
  std::vector<NodeId> order;
  std::set<NodeId> live;
  NodeId output_id = -1;
  std::uint64_t context_fingerprint = 0;
  /// Hash of every non-differentiable switch (ReLU signs, max-pool and
  /// maxout winners). Equal signatures mean the same linear region.
  std::uint64_t switch_signature = 0;
  bool retained = true;

  const Tensor& output() const { return values.at(output_id); }
  const Tensor& value(NodeId id) const;
};

struct ForwardOptions {
  /// Keep every intermediate value and cache for backward(). When false,
  /// tensors are released once their consumers have run.
  bool retain = true;
};

ForwardPass forward(const ArchGraph& graph, const WeightStore& weights, const Tensor& input,
                    const EvalContext& ctx, ForwardOptions options = {});

struct BackwardResult {
  ParamGrads params;                      // one entry per parameter, zeros where frozen/dead
  std::map<NodeId, Tensor> output_grads;  // d loss / d node output
  Tensor input_grad;
};

BackwardResult backward(const ArchGraph& graph, const WeightStore& weights,
                        const ForwardPass& pass, const EvalContext& ctx, const Tensor& loss_grad);

struct LossResult {
  double loss = 0.0;
  Tensor grad;
};

/// Mean softmax cross-entropy over the batch; gradient (softmax - onehot)/batch.
LossResult loss_softmax_xent(const Tensor& scores, std::span<const int> labels);

/// Index of the largest score per row (lowest index on ties).
std::vector<int> argmax_rows(const Tensor& scores);

/// Recomputes BatchNorm statistics from `data` in calibrate mode (all
/// branches alive, dropout off) and stores them in `weights`.
void refresh_bn_statistics(const ArchGraph& graph, WeightStore& weights, const Tensor& data);

// ---------------------------------------------------------------------------
// Finite-difference gradient checking

struct GradcheckOptions {
  double epsilon = 1e-5;
  double tolerance = 1e-4;
  /// Number of parameters to evaluate; 0 checks every scalar.
  std::size_t sample = 200;
  std::uint64_t seed = 0;
  /// Parameter names to leave out (e.g. conv "bias" ahead of train-mode BN,
  /// whose exact gradient is zero).
  std::set<std::pair<NodeId, std::string>> exclude;
  std::set<std::string> exclude_names;
};

struct GradcheckEntry {
  NodeId node = 0;
  std::string param;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
  bool skipped = false;  // perturbation crossed a non-differentiable switch
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  bool pass = false;
};

/// Central differences on sampled parameters against backward(), using the
/// softmax cross-entropy of `labels` as the loss. Perturbations that change
/// the switch signature are reported as skipped.
GradcheckReport gradcheck(const ArchGraph& graph, const WeightStore& weights, const Tensor& input,
                          std::span<const int> labels, const EvalContext& ctx,
                          const GradcheckOptions& options = {});

}  // namespace fractal

#endif  // FRACTAL_NN_CORE_HPP_
