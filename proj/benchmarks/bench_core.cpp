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

#include <benchmark/benchmark.h>

#include "fractal/generators.hpp"
#include "fractal/graph_ir.hpp"
#include "fractal/nn_core.hpp"
#include "fractal/random.hpp"
#include "fractal/weights.hpp"

namespace {

using namespace fractal;

Tensor random_input(int batch, TensorShape s, std::uint64_t seed) {
  Rng rng(seed);
  Tensor x({batch, s.channels, s.height, s.width});
  for (double& v : x.data()) v = rng.normal();
  return x;
}

// Input -> Conv(k) -> Predict, timing the whole forward pass. Arg: channels.
void BM_ConvForward(benchmark::State& state) {
  const int ch = static_cast<int>(state.range(0));
  ArchGraph g("conv_bench");
  const NodeId in = g.add_node(op::Input{{ch, 32, 32}});
  const NodeId conv = g.add_node(op::Conv{ch, 3, 1, 1});
  const NodeId out = g.add_node(op::Predict{10});
  g.connect(in, conv);
  g.connect(conv, out);
  g.set_input(in);
  g.set_output(out);
  const WeightStore w = init_weights(g, 1);
  const Tensor x = random_input(8, {ch, 32, 32}, 2);
  EvalContext ctx;
  for (auto _ : state) benchmark::DoNotOptimize(forward(g, w, x, ctx, {false}).output());
  // Multiply-adds of the convolution alone.
  state.counters["MACs"] = benchmark::Counter(8.0 * ch * ch * 9 * 32 * 32, benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_ConvForward)->Arg(4)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_CountPathsFoF(benchmark::State& state) {
  // The desk preset has four module levels, enough for 2 or 3 meta columns.
  FoFSpec spec = FoFSpec::desk();
  spec.meta_columns = static_cast<int>(state.range(0));
  const ArchGraph g = gen_fof(spec);
  for (auto _ : state) benchmark::DoNotOptimize(count_paths(g));
  state.counters["nodes"] = static_cast<double>(g.size());
}
BENCHMARK(BM_CountPathsFoF)->DenseRange(2, 3)->Unit(benchmark::kMicrosecond);

void BM_CountPathsFractalNet(benchmark::State& state) {
  FractalSpec spec;
  spec.columns = static_cast<int>(state.range(0));
  const ArchGraph g = gen_fractalnet(spec);
  for (auto _ : state) benchmark::DoNotOptimize(count_paths(g));
  state.counters["nodes"] = static_cast<double>(g.size());
}
BENCHMARK(BM_CountPathsFractalNet)->DenseRange(2, 6, 2)->Unit(benchmark::kMicrosecond);

void BM_DeskFractalNetStep(benchmark::State& state) {
  const ArchGraph g = gen_fractalnet(FractalSpec::desk());
  const WeightStore w = init_weights(g, 3);
  const Tensor x = random_input(25, FractalSpec::desk().input_shape, 4);
  const std::vector<int> labels(25, 1);
  EvalContext ctx;
  ctx.mode = Mode::kTrain;
  for (auto _ : state) {
    const ForwardPass pass = forward(g, w, x, ctx);
    const LossResult loss = loss_softmax_xent(pass.output(), labels);
    benchmark::DoNotOptimize(backward(g, w, pass, ctx, loss.grad));
  }
}
BENCHMARK(BM_DeskFractalNetStep)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
