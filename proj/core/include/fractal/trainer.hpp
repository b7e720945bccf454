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

#ifndef FRACTAL_TRAINER_HPP_
#define FRACTAL_TRAINER_HPP_

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fractal/dataset.hpp"
#include "fractal/graph_ir.hpp"
#include "fractal/nn_core.hpp"
#include "fractal/random.hpp"
#include "fractal/weights.hpp"

namespace fractal {

class TrainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Schedules

using DropPathMask = std::map<NodeId, std::vector<bool>>;

/// Drops each inbound branch of every Mean join with probability `rate`,
/// reviving one uniformly chosen branch when a join would lose all of them.
/// Freeze-drop-path joins are left alone.
DropPathMask sample_drop_path(const ArchGraph& graph, double rate, Rng& rng);

/// Relative activity of each branch: (b+1)^2 / sum for square intervals,
/// 1/k for equal intervals.
std::vector<double> fdp_interval_weights(const FreezeDropPathConfig& config);

/// Active branch ordinal at `iteration`. Stochastic mode draws from the
/// interval weights; deterministic mode splits each cycle of
/// num_iter_per_cycle iterations into consecutive intervals.
int fdp_active_branch(const FreezeDropPathConfig& config, std::int64_t iteration, Rng& rng);

/// The graph's single freeze-drop-path join; throws TrainError when there
/// are none or several.
NodeId find_fdp_join(const ArchGraph& graph);

/// Branches below `active` stay in the join and are frozen, `active` trains,
/// branches above it are dropped. Nodes shared with the active branch are not
/// frozen. Eval-mode contexts are returned unchanged.
EvalContext apply_fdp_masks(const ArchGraph& graph, int active, EvalContext ctx);

struct TrainConfig {
  double base_lr = 0.002;
  double lr_drop_factor = 10.0;
  std::vector<double> lr_milestones{0.5, 0.75, 0.875};  // fractions of `iterations`
  int iterations = 100;
  int batch_size = 25;
  double local_drop_path_rate = 0.15;
  /// Overrides the graph's dropout rates in node-id order when non-empty.
  std::vector<double> dropout_rates;
  std::uint64_t seed = 0;

  int eval_interval = 100;
  /// Training images used to refresh BN statistics before evaluation.
  int calibration_samples = 100;
  int eval_batch = 100;
  bool horizontal_flip = false;

  /// Desk-scale defaults: plain SGD at 0.05 with the proportional schedule.
  static TrainConfig desk();
  void check() const;
};

double learning_rate(const TrainConfig& config, std::int64_t iteration);

/// w <- w - lr * g. Unpinned sharing groups receive the summed gradient of
/// their members and are re-synchronized; pinned slices never move.
/// Throws TrainError on a non-finite gradient.
void sgd_step(WeightStore& weights, const ParamGrads& grads, double lr);

struct HistoryPoint {
  int iteration = 0;
  double loss = 0.0;  // mean training loss since the previous point
  double test_accuracy = 0.0;
  double train_accuracy = 0.0;  // on the minibatches since the previous point
};

struct TrainResult {
  std::vector<HistoryPoint> history;
  std::vector<double> iteration_loss;
  std::vector<int> active_branch;  // -1 when the graph has no freeze-drop-path join
  WeightStore weights;
};

using TrainObserver = std::function<void(int iteration, double loss)>;

TrainResult train(const ArchGraph& graph, const Dataset& train_set, const Dataset& test_set,
                  const TrainConfig& config, std::optional<WeightStore> initial = std::nullopt,
                  const TrainObserver& observer = {});

/// Eval-mode accuracy on `data` (batched, no BN refresh).
double evaluate_accuracy(const ArchGraph& graph, const WeightStore& weights, const Dataset& data,
                         int batch = 100);

/// Copy of `graph` in which `join` is replaced by its inbound branch
/// `ordinal`; nodes that no longer reach the output are removed.
ArchGraph isolate_branch(const ArchGraph& graph, NodeId join, int ordinal);

/// CSV with header `iteration,loss,test_accuracy`.
std::string history_csv(const std::vector<HistoryPoint>& history);
std::vector<HistoryPoint> parse_history_csv(const std::string& text);

}  // namespace fractal

#endif  // FRACTAL_TRAINER_HPP_
