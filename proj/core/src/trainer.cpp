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

#include "fractal/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace fractal {

namespace {

int count_fdp_joins(const ArchGraph& graph) {
  int n = 0;
  for (const auto& [id, kind] : graph.nodes()) n += is_join(kind, JoinKind::kFreezeDropPath);
  return n;
}

void override_dropout(ArchGraph& graph, const std::vector<double>& rates) {
  if (rates.empty()) return;
  std::size_t i = 0;
  for (auto& [id, kind] : graph.nodes()) {
    if (!holds<op::Dropout>(kind)) continue;
    if (i >= rates.size()) throw TrainError("more dropout layers than configured dropout rates");
    std::get<op::Dropout>(graph.node(id)).rate = rates[i++];
  }
  if (i != rates.size()) {
    throw TrainError("graph has " + std::to_string(i) + " dropout layers but " +
                     std::to_string(rates.size()) + " rates were configured");
  }
}

Dataset fit_to_graph(const Dataset& data, TensorShape target) {
  if (data.shape == target) return data;
  try {
    return downsample(data, target);
  } catch (const DatasetError& e) {
    throw TrainError(std::string("dataset shape does not match graph input: ") + e.what());
  }
}

void flip_horizontal(Tensor& x, int index) {
  const int c = x.dim(1), h = x.dim(2), w = x.dim(3);
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < h; ++y) {
      double* row = &x.at(index, ch, y, 0);
      std::reverse(row, row + w);
    }
  }
}

}  // namespace

TrainConfig TrainConfig::desk() {
  TrainConfig c;
  c.base_lr = 0.05;
  c.iterations = 2000;
  c.batch_size = 25;
  c.eval_interval = 250;
  return c;
}

void TrainConfig::check() const {
  if (iterations < 1) throw TrainError("iteration budget must be positive");
  if (batch_size < 1) throw TrainError("batch size must be positive");
  if (!(base_lr >= 0.0) || !std::isfinite(base_lr)) throw TrainError("base lr must be >= 0");
  if (!(lr_drop_factor > 0.0)) throw TrainError("lr drop factor must be positive");
  for (std::size_t i = 0; i < lr_milestones.size(); ++i) {
    const double m = lr_milestones[i];
    if (!(m > 0.0 && m < 1.0)) throw TrainError("lr milestones must lie in (0,1)");
    if (i > 0 && !(m > lr_milestones[i - 1])) {
      throw TrainError("lr milestones must be strictly increasing");
    }
  }
  if (!(local_drop_path_rate >= 0.0 && local_drop_path_rate < 1.0)) {
    throw TrainError("drop-path rate must lie in [0,1)");
  }
  for (double r : dropout_rates) {
    if (!(r >= 0.0 && r < 1.0)) throw TrainError("dropout rates must lie in [0,1)");
  }
  if (eval_interval < 1) throw TrainError("eval interval must be positive");
  if (eval_batch < 1) throw TrainError("eval batch must be positive");
  if (calibration_samples < 1) throw TrainError("calibration sample count must be positive");
}

void sgd_step(WeightStore& weights, const ParamGrads& grads, double lr) {
  for (const auto& [id, set] : grads) {
    if (!weights.has(id)) {
      throw TrainError("gradient for node " + std::to_string(id) + " which has no parameters");
    }
    for (const auto& [name, g] : set) {
      if (!g.same_shape(weights.param(id, name))) {
        throw TrainError("gradient shape mismatch at node " + std::to_string(id) + " " + name);
      }
    }
  }

  ParamGrads g = grads;
  auto grad_of = [&](const SliceRef& s) -> Tensor& {
    auto& set = g[s.node];
    auto it = set.find(s.param);
    if (it == set.end()) {
      it = set.emplace(s.param, Tensor::zeros_like(weights.param(s.node, s.param))).first;
    }
    return it->second;
  };
  for (const SharingGroup& group : weights.groups) {
    if (group.members.empty()) continue;
    std::vector<std::vector<std::size_t>> idx;
    for (const SliceRef& s : group.members) idx.push_back(slice_indices(grad_of(s), s));
    if (group.pinned) {
      for (std::size_t m = 0; m < group.members.size(); ++m) {
        Tensor& t = grad_of(group.members[m]);
        for (std::size_t i : idx[m]) t[i] = 0.0;
      }
      continue;
    }
    const std::size_t n = idx.front().size();
    std::vector<double> sum(n, 0.0);
    for (std::size_t m = 0; m < group.members.size(); ++m) {
      if (idx[m].size() != n) throw TrainError("sharing group '" + group.label + "' has uneven slices");
      const Tensor& t = grad_of(group.members[m]);
      for (std::size_t i = 0; i < n; ++i) sum[i] += t[idx[m][i]];
    }
    for (std::size_t m = 0; m < group.members.size(); ++m) {
      Tensor& t = grad_of(group.members[m]);
      for (std::size_t i = 0; i < n; ++i) t[idx[m][i]] = sum[i];
    }
  }

  for (const auto& [id, set] : g) {
    for (const auto& [name, t] : set) {
      if (!t.all_finite()) {
        throw TrainError("non-finite gradient at node " + std::to_string(id) + " parameter " +
                         name);
      }
    }
  }
  for (const auto& [id, set] : g) {
    for (const auto& [name, t] : set) {
      Tensor& w = weights.param(id, name);
      for (std::size_t i = 0; i < t.size(); ++i) w[i] -= lr * t[i];
    }
  }
  weights.synchronize();
}

double evaluate_accuracy(const ArchGraph& graph, const WeightStore& weights, const Dataset& data,
                         int batch) {
  if (data.size() == 0) return 0.0;
  const EvalContext ctx{};
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t begin = 0; begin < data.size(); begin += static_cast<std::size_t>(batch)) {
    const std::size_t end = std::min(data.size(), begin + static_cast<std::size_t>(batch));
    idx.resize(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    const ForwardPass pass = forward(graph, weights, data.images(idx), ctx, {.retain = false});
    const std::vector<int> pred = argmax_rows(pass.output());
    for (std::size_t i = 0; i < idx.size(); ++i) correct += pred[i] == data.labels[idx[i]];
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

TrainResult train(const ArchGraph& graph_in, const Dataset& train_set, const Dataset& test_set,
                  const TrainConfig& config, std::optional<WeightStore> initial,
                  const TrainObserver& observer) {
  config.check();
  if (train_set.size() == 0) throw TrainError("training dataset is empty");
  train_set.check();

  ArchGraph graph = graph_in;
  override_dropout(graph, config.dropout_rates);
  validate_or_throw(graph);
  const TensorShape in_shape = std::get<op::Input>(graph.node(graph.input_id())).shape;
  const int classes = std::get<op::Predict>(graph.node(graph.output_id())).classes;
  if (train_set.classes > classes) {
    throw TrainError("dataset has " + std::to_string(train_set.classes) +
                     " classes but the graph predicts " + std::to_string(classes));
  }
  const Dataset train_data = fit_to_graph(train_set, in_shape);
  const Dataset test_data = fit_to_graph(test_set, in_shape);

  TrainResult result;
  result.weights = initial ? std::move(*initial) : init_weights(graph, config.seed);
  check_weights(graph, result.weights);
  WeightStore& weights = result.weights;

  const int fdp_count = count_fdp_joins(graph);
  std::optional<FreezeDropPathConfig> fdp;
  if (fdp_count > 0) {
    const NodeId join = find_fdp_join(graph);
    fdp = std::get<op::Join>(graph.node(join)).fdp;
  }

  Rng data_rng(mix_seed(config.seed, 0xda7aULL));
  Rng drop_rng(mix_seed(config.seed, 0xd0b0ULL));
  Rng fdp_rng(mix_seed(config.seed, 0xfd00ULL));
  Rng flip_rng(mix_seed(config.seed, 0xf11bULL));

  const std::size_t n = train_data.size();
  const std::size_t batch = std::min(n, static_cast<std::size_t>(config.batch_size));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  shuffle(order, data_rng);
  std::size_t cursor = 0;

  std::vector<std::size_t> calib(std::min(n, static_cast<std::size_t>(config.calibration_samples)));
  std::iota(calib.begin(), calib.end(), std::size_t{0});
  const Tensor calib_images = train_data.images(calib);

  double loss_sum = 0.0;
  std::size_t correct = 0, seen = 0;
  int since = 0;
  std::vector<std::size_t> idx(batch);
  for (int t = 0; t < config.iterations; ++t) {
    if (cursor + batch > n) {
      shuffle(order, data_rng);
      cursor = 0;
    }
    std::copy_n(order.begin() + static_cast<std::ptrdiff_t>(cursor), batch, idx.begin());
    cursor += batch;
    Tensor x = train_data.images(idx);
    if (config.horizontal_flip) {
      for (int i = 0; i < static_cast<int>(batch); ++i) {
        if (flip_rng.bernoulli(0.5)) flip_horizontal(x, i);
      }
    }
    const std::vector<int> y = train_data.labels_of(idx);

    EvalContext ctx;
    ctx.mode = Mode::kTrain;
    ctx.seed = mix_seed(config.seed, 0x10000ULL + static_cast<std::uint64_t>(t));
    if (config.local_drop_path_rate > 0.0) {
      ctx.alive = sample_drop_path(graph, config.local_drop_path_rate, drop_rng);
    }
    int active = -1;
    if (fdp) {
      active = fdp_active_branch(*fdp, t, fdp_rng);
      ctx = apply_fdp_masks(graph, active, std::move(ctx));
    }

    const ForwardPass pass = forward(graph, weights, x, ctx);
    const LossResult loss = loss_softmax_xent(pass.output(), y);
    if (!std::isfinite(loss.loss)) {
      throw TrainError("non-finite loss at iteration " + std::to_string(t));
    }
    const BackwardResult grads = backward(graph, weights, pass, ctx, loss.grad);
    sgd_step(weights, grads.params, learning_rate(config, t));

    const std::vector<int> pred = argmax_rows(pass.output());
    for (std::size_t i = 0; i < batch; ++i) correct += pred[i] == y[i];
    seen += batch;
    loss_sum += loss.loss;
    ++since;
    result.iteration_loss.push_back(loss.loss);
    result.active_branch.push_back(active);
    if (observer) observer(t, loss.loss);

    if ((t + 1) % config.eval_interval == 0 || t + 1 == config.iterations) {
      refresh_bn_statistics(graph, weights, calib_images);
      HistoryPoint point;
      point.iteration = t + 1;
      point.loss = loss_sum / since;
      point.train_accuracy = static_cast<double>(correct) / static_cast<double>(seen);
      point.test_accuracy = evaluate_accuracy(graph, weights, test_data, config.eval_batch);
      result.history.push_back(point);
      loss_sum = 0.0;
      correct = seen = 0;
      since = 0;
    }
  }
  return result;
}

ArchGraph isolate_branch(const ArchGraph& graph, NodeId join, int ordinal) {
  if (!graph.contains(join) || !is_join(graph.node(join))) {
    throw GraphError("node " + std::to_string(join) + " is not a join");
  }
  const std::vector<NodeId> in = graph.inputs(join);
  if (ordinal < 0 || ordinal >= static_cast<int>(in.size())) {
    throw GraphError("join " + std::to_string(join) + " has no branch " + std::to_string(ordinal));
  }
  ArchGraph out = graph;
  const NodeId src = in[static_cast<std::size_t>(ordinal)];
  const std::vector<Edge> outgoing = out.out_edges(join);
  out.remove_node(join);
  for (const Edge& e : outgoing) out.add_edge({src, e.dst, e.ordinal});
  remove_dead_nodes(out);
  out.canonicalize_edges();
  out.set_name(graph.name() + "_branch" + std::to_string(ordinal));
  validate_or_throw(out);
  return out;
}

std::string history_csv(const std::vector<HistoryPoint>& history) {
  std::string out = "iteration,loss,test_accuracy\n";
  char buf[96];
  for (const HistoryPoint& p : history) {
    std::snprintf(buf, sizeof buf, "%d,%.10g,%.6f\n", p.iteration, p.loss, p.test_accuracy);
    out += buf;
  }
  return out;
}

std::vector<HistoryPoint> parse_history_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("iteration,loss,test_accuracy", 0) != 0) {
    throw TrainError("history CSV must start with header iteration,loss,test_accuracy");
  }
  std::vector<HistoryPoint> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    HistoryPoint p;
    if (std::sscanf(line.c_str(), "%d,%lf,%lf", &p.iteration, &p.loss, &p.test_accuracy) != 3) {
      throw TrainError("malformed history CSV line " + std::to_string(lineno));
    }
    out.push_back(p);
  }
  return out;
}

}  // namespace fractal
