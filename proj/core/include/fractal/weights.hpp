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

#ifndef FRACTAL_WEIGHTS_HPP_
#define FRACTAL_WEIGHTS_HPP_

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "fractal/graph_ir.hpp"
#include "fractal/tensor.hpp"

namespace fractal {

// Parameter names used in a ParamSet.
inline constexpr std::string_view kWeight = "weight";  // conv (O,I,k,k); predict (classes,C)
inline constexpr std::string_view kBias = "bias";
inline constexpr std::string_view kGamma = "gamma";
inline constexpr std::string_view kBeta = "beta";

using ParamSet = std::map<std::string, Tensor, std::less<>>;
using ParamGrads = std::map<NodeId, ParamSet>;

/// Per-channel normalization statistics used by BatchNorm in eval mode.
struct BnStatistics {
  std::vector<double> mean;
  std::vector<double> var;
  bool operator==(const BnStatistics&) const = default;
};

/// Rectangular block of a parameter: rows [out_begin,out_end) and, for
/// rank ≥ 2 parameters, columns [in_begin,in_end). Trailing (spatial)
/// dimensions are always taken whole.
struct SliceRef {
  NodeId node = 0;
  std::string param{kWeight};
  int out_begin = 0;
  int out_end = 0;
  int in_begin = 0;
  int in_end = 0;
  bool operator==(const SliceRef&) const = default;
};

/// Slices constrained to hold identical values. A pinned group holds fixed
/// constants and is never updated by training.
struct SharingGroup {
  std::vector<SliceRef> members;
  bool pinned = false;
  std::string label;
  bool operator==(const SharingGroup&) const = default;
};

class WeightStore {
 public:
  std::map<NodeId, ParamSet> params;
  std::map<NodeId, BnStatistics> bn_stats;
  std::vector<SharingGroup> groups;

  Tensor& param(NodeId node, std::string_view name);
  const Tensor& param(NodeId node, std::string_view name) const;
  bool has(NodeId node) const { return params.count(node) != 0; }

  std::size_t parameter_count() const;
  /// Scalars free to train: shared slices count once, pinned slices not at all.
  std::size_t independent_parameter_count() const;

  /// Copies the first member of each unpinned group onto the others.
  void synchronize();
  /// Largest deviation between group members (0 when all groups hold).
  double sharing_violation() const;

  bool operator==(const WeightStore&) const = default;
};

/// Flat indices of every element of `slice` within `tensor`, in row-major
/// order of the slice. Members of one group map element-by-element.
std::vector<std::size_t> slice_indices(const Tensor& tensor, const SliceRef& slice);

/// Zero-filled gradient buffers shaped like every parameter in `weights`.
ParamGrads zero_grads(const WeightStore& weights);

/// Seeded uniform(±1/sqrt(fan_in)) filters and FC weights, zero biases, unit
/// BN scale, zero BN shift, BN statistics (0, 1). Per-node streams are
/// derived from (seed, node id) so ids, not visit order, fix the draw.
WeightStore init_weights(const ArchGraph& graph, std::uint64_t seed);

/// Throws GraphError when a parameterized node lacks parameters or a shape
/// disagrees with the graph.
void check_weights(const ArchGraph& graph, const WeightStore& weights);

std::string serialize_weights(const WeightStore& weights);
WeightStore deserialize_weights(std::string_view text);

}  // namespace fractal

#endif  // FRACTAL_WEIGHTS_HPP_
