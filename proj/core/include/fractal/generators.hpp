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

#ifndef FRACTAL_GENERATORS_HPP_
#define FRACTAL_GENERATORS_HPP_

#include <vector>

#include "fractal/graph_ir.hpp"

namespace fractal {

/// Sequential FractalNet: `module_channels.size()` module stages, each
/// followed by a 2x2 pool and a dropout layer.
struct FractalSpec {
  int columns = 3;
  std::vector<int> module_channels{64, 128, 256, 512, 512};
  int classes = 10;
  TensorShape input_shape{3, 32, 32};
  std::vector<double> dropout_rates{0.0, 0.1, 0.2, 0.3, 0.3};
  JoinKind downsample_join = JoinKind::kMean;  // kMean or kConcat
  PoolKind pool_kind = PoolKind::kMax;

  /// Three stages of (8, 16, 32) channels on 3x16x16 input.
  static FractalSpec desk();
  void check() const;
};

/// Fractal arrangement of FractalNet modules. Meta-column k holds 2^(k-1)
/// modules; every module is followed by as many pools as the resolution
/// levels it spans. `module.module_channels[level]` sets the width of a
/// module ending at that level.
struct FoFSpec {
  FractalSpec module;
  int meta_columns = 3;
  JoinKind bottom_join = JoinKind::kMean;  // kMean or kFreezeDropPath
  FreezeDropPathConfig fdp{};              // used when bottom_join is freeze-drop-path

  /// Four levels of (4, 4, 8, 8) channels on 3x32x32 input.
  static FoFSpec desk();
  int levels() const { return 1 << (meta_columns - 1); }
  void check() const;
};

struct ModuleOptions {
  /// Kernel per column, column 1 (shallowest) first. Empty means all 3.
  std::vector<int> kernels;
  JoinKind inner_join = JoinKind::kMean;
  JoinKind bottom_join = JoinKind::kMean;
};

/// Appends Conv -> BatchNorm -> ReLU and returns the ReLU node.
NodeId add_conv_block(ArchGraph& graph, NodeId from, int out_channels, int kernel);

/// Appends one FractalNet module reading from `from`; returns its output
/// node. Column c holds 2^(c-1) conv blocks; joins are merged where several
/// columns end at the same depth and list inputs shallowest column first.
NodeId add_fractal_module(ArchGraph& graph, NodeId from, int columns, int out_channels,
                          const ModuleOptions& options = {});

/// Input -> one module -> Predict.
ArchGraph gen_fractal_module(int columns, TensorShape in_shape, int out_channels,
                             const std::vector<int>& kernels = {}, int classes = 10,
                             JoinKind join = JoinKind::kMean);

ArchGraph gen_fractalnet(const FractalSpec& spec);
ArchGraph gen_fof(const FoFSpec& spec);
/// FoF whose bottom join is freeze-drop-path over {column 1, mean of the
/// deeper columns}.
ArchGraph gen_sbn(const FoFSpec& spec);
/// SBN with the deeper-column mean squared before the freeze-drop-path join.
ArchGraph gen_tsn(const FoFSpec& spec);

}  // namespace fractal

#endif  // FRACTAL_GENERATORS_HPP_
