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

#include "doctest.h"
#include "fixtures.hpp"
#include "fractal/generators.hpp"
#include "fractal/rewriter.hpp"
#include "fractal/trainer.hpp"

using namespace fractal;
namespace fx = fractal::fixtures;

namespace {

WeightStore weights_for(const ArchGraph& g, std::uint64_t seed) {
  WeightStore w = init_weights(g, seed);
  fx::perturb_bn(g, w, seed);
  // Non-zero conv biases so bias handling is exercised too.
  Rng rng(seed + 100);
  for (const auto& [id, kind] : g.nodes()) {
    if (holds<op::Conv>(kind)) {
      for (double& v : w.param(id, kBias).data()) v = rng.uniform(-0.3, 0.3);
    }
  }
  return w;
}

EquivalenceReport equiv(const ArchGraph& g1, const WeightStore& w1, const ArchGraph& g2,
                        const WeightStore& w2, int refresh = 0) {
  EquivalenceOptions o;
  o.seed = 17;
  o.refresh_bn = refresh;
  return verify_equivalence(g1, w1, g2, w2, o);
}

int count_kind(const ArchGraph& g, JoinKind kind) {
  int n = 0;
  for (const auto& [id, k] : g.nodes()) n += is_join(k, kind);
  return n;
}

}  // namespace

TEST_CASE("sum_to_concat is exact on the Sum fixtures") {
  const std::vector<int> expected_rewrites{1, 1, 2};
  const std::vector<fx::Named> graphs = fx::sum_graphs();
  for (std::size_t i = 0; i < graphs.size(); ++i) {
    const ArchGraph& g = graphs[i].graph;
    CAPTURE(graphs[i].name);
    const WeightStore w = weights_for(g, i);
    const Rewritten r = sum_to_concat(g, w);
    CHECK(static_cast<int>(r.log.size()) == expected_rewrites[i]);
    CHECK(validate(r.graph).ok);
    const EquivalenceReport rep = equiv(g, w, r.graph, r.weights);
    CHECK(rep.samples == 100);
    CHECK(rep.pass);
    CHECK(rep.max_abs_diff < 1e-9);
    CHECK(r.weights.independent_parameter_count() == w.independent_parameter_count());
    CHECK(r.weights.sharing_violation() == 0.0);
    for (const AppliedRewrite& a : r.log) CHECK(is_join(r.graph.node(a.target), JoinKind::kConcat));
  }
}

TEST_CASE("sum_to_concat preconditions") {
  const ArchGraph g = fx::sum_graphs()[2].graph;
  const WeightStore w = weights_for(g, 0);
  NodeId into_bn = -1;
  for (const auto& [id, k] : g.nodes()) {
    if (is_join(k, JoinKind::kSum) && holds<op::BatchNorm>(g.node(g.consumers(id).front()))) into_bn = id;
  }
  REQUIRE(into_bn >= 0);
  CHECK_THROWS_AS(sum_to_concat(g, w, into_bn), RewriteError);
  CHECK_THROWS_AS(sum_to_concat(g, w, g.input_id()), RewriteError);
  // A second rewrite finds nothing left to do.
  const Rewritten once = sum_to_concat(g, w);
  CHECK(sum_to_concat(once.graph, once.weights).log.empty());
}

TEST_CASE("verification is sensitive to a perturbed weight") {
  const ArchGraph g = fx::sum_graphs()[0].graph;
  const WeightStore w = weights_for(g, 1);
  Rewritten r = sum_to_concat(g, w);
  const NodeId consumer = g.consumers(r.log.front().target).front();
  r.weights.param(consumer, kWeight)[0] += 1e-6;
  const EquivalenceReport rep = equiv(g, w, r.graph, r.weights);
  CHECK_FALSE(rep.pass);
  CHECK(rep.max_abs_diff > 1e-9);

  const ArchGraph other = fx::mean_bn_graphs()[0].graph;
  CHECK_THROWS_AS(equiv(g, w, other, init_weights(other, 0)), GraphError);
}

TEST_CASE("mean_to_sum_under_bn is exact with stored and refreshed statistics") {
  const std::vector<fx::Named> graphs = fx::mean_bn_graphs();
  for (std::size_t i = 0; i < graphs.size(); ++i) {
    const ArchGraph& g = graphs[i].graph;
    CAPTURE(graphs[i].name);
    const WeightStore w = weights_for(g, 10 + i);
    const Rewritten r = mean_to_sum_under_bn(g, w);
    REQUIRE(r.log.size() == 1);
    CHECK(count_kind(r.graph, JoinKind::kMean) == 0);
    CHECK(count_kind(r.graph, JoinKind::kSum) == 1);
    CHECK(equiv(g, w, r.graph, r.weights).max_abs_diff < 1e-9);
    const EquivalenceReport refreshed = equiv(g, w, r.graph, r.weights, 50);
    CHECK(refreshed.pass);
    CHECK(refreshed.max_abs_diff < 1e-9);
    CHECK(r.weights.independent_parameter_count() == w.independent_parameter_count());
    // Without the statistic scaling the rewrite is not exact.
    CHECK_FALSE(equiv(g, w, r.graph, w).pass);
  }
}

TEST_CASE("mean_to_sum_under_bn preconditions") {
  const ArchGraph g = gen_fractal_module(2, {3, 8, 8}, 4);
  const WeightStore w = init_weights(g, 0);
  NodeId mean = -1;
  for (const auto& [id, k] : g.nodes()) {
    if (is_join(k, JoinKind::kMean)) mean = id;
  }
  REQUIRE(mean >= 0);
  CHECK_THROWS_AS(mean_to_sum_under_bn(g, w, mean), RewriteError);
  CHECK(mean_to_sum_under_bn(g, w).log.empty());
}

TEST_CASE("canonicalize_skips is exact on the skip fixtures") {
  for (const fx::Named& n : fx::skip_graphs()) {
    CAPTURE(n.name);
    const WeightStore w = weights_for(n.graph, 3);
    const Rewritten r = canonicalize_skips(n.graph, w);
    REQUIRE(r.log.size() == 1);
    CHECK(r.log.front().removed_edges.size() >= 1);
    CHECK(count_paths(r.graph) == count_paths(n.graph) - 1);
    const EquivalenceReport rep = equiv(n.graph, w, r.graph, r.weights);
    CHECK(rep.pass);
    CHECK(rep.max_abs_diff < 1e-9);
    CHECK(r.weights.independent_parameter_count() == w.independent_parameter_count());

    // Pinned pass-through slices survive SGD, so the rewrite stays exact for
    // the identity path even after training steps on random gradients.
    WeightStore trained = r.weights;
    ParamGrads grads = zero_grads(trained);
    Rng rng(4);
    for (auto& [id, set] : grads) {
      for (auto& [name, t] : set) {
        for (double& v : t.data()) v = rng.normal();
      }
    }
    sgd_step(trained, grads, 0.1);
    for (const SharingGroup& grp : r.weights.groups) {
      if (!grp.pinned) continue;
      for (const SliceRef& s : grp.members) {
        const Tensor& before = r.weights.param(s.node, s.param);
        const Tensor& after = trained.param(s.node, s.param);
        for (std::size_t i : slice_indices(before, s)) CHECK(after[i] == before[i]);
      }
    }
  }
}

TEST_CASE("canonicalize_skips rejects edges that are not skips") {
  const ArchGraph g = fx::skip_graphs()[0].graph;
  const WeightStore w = init_weights(g, 0);
  const Edge first = g.out_edges(g.input_id()).front();
  CHECK_THROWS_AS(canonicalize_skips(g, w, first), RewriteError);
  CHECK(canonicalize_skips(fx::lint_chain(), init_weights(fx::lint_chain(), 0)).log.empty());
}

TEST_CASE("residual block reaches standard form through a plan") {
  const fx::ResidualFixture f = fx::residual_graph();
  const WeightStore w = weights_for(f.graph, 5);
  RewritePlan plan;
  plan.passes = {RewritePass::kSumToConcat, RewritePass::kCanonicalizeSkips};
  const Rewritten r = apply_plan(f.graph, w, plan);
  CHECK(plan.log.size() == 2);
  CHECK(count_paths(r.graph) == 1);
  CHECK(equiv(f.graph, w, r.graph, r.weights).max_abs_diff < 1e-9);

  const RewritePlan back = parse_plan(plan_json(plan));
  CHECK(back.passes == plan.passes);
  CHECK(back.log.size() == plan.log.size());

  RewritePlan late;
  late.passes = {RewritePass::kSumToConcat, RewritePass::kPruneSlices};
  late.severed = {{f.source, f.sum}};
  CHECK_THROWS_AS(apply_plan(f.graph, w, late), RewriteError);
  CHECK_THROWS_AS(parse_pass("fold_constants"), RewriteError);
}

TEST_CASE("prune_slices matches a hand-built pruned graph") {
  const fx::PruneFixture f = fx::prune_graph();
  const WeightStore w = weights_for(f.graph, 6);
  const Rewritten r = prune_slices(f.graph, w, {{f.a, f.consumer}});
  CHECK_FALSE(r.graph.contains(f.a));
  CHECK(r.graph.inputs(f.concat).size() == 2);
  CHECK(equiv(f.graph, r.source_weights, r.graph, r.weights).max_abs_diff < 1e-9);
  // The unpruned weights differ, so the source must really be modified.
  CHECK_FALSE(equiv(f.graph, w, r.graph, r.weights).pass);

  // Same network written out by hand.
  const NodeId conv_b = f.graph.inputs(f.b).front();
  const NodeId bn = f.graph.consumers(f.consumer).front();
  NodeId in = 0;
  ArchGraph m = fx::begin("prune_manual", {3, 8, 8}, &in);
  const NodeId mb_conv = fx::conv(m, in, 4);
  const NodeId mb = fx::chain(m, mb_conv, {op::Activation{}});
  const NodeId mc = fx::conv(m, in, 2, 1);
  const NodeId mcat = fx::join(m, {mb, mc}, JoinKind::kConcat);
  const NodeId mcons = fx::conv(m, mcat, 6);
  const NodeId mbn = fx::chain(m, mcons, {op::BatchNorm{}});
  fx::finish(m, fx::chain(m, mbn, {op::Activation{}}));
  WeightStore mw = init_weights(m, 0);
  auto copy = [&](NodeId from, NodeId to) {
    mw.params.at(to) = w.params.at(from);
    if (w.bn_stats.count(from)) mw.bn_stats.at(to) = w.bn_stats.at(from);
  };
  copy(conv_b, mb_conv);
  copy(f.c, mc);
  copy(bn, mbn);
  copy(f.graph.output_id(), m.output_id());
  mw.param(mcons, kBias) = w.param(f.consumer, kBias);
  const Tensor& full = w.param(f.consumer, kWeight);
  Tensor& cut = mw.param(mcons, kWeight);
  for (int o = 0; o < 6; ++o) {
    for (int c = 0; c < 6; ++c) {
      for (int y = 0; y < 3; ++y) {
        for (int x = 0; x < 3; ++x) cut.at(o, c, y, x) = full.at(o, c + 3, y, x);
      }
    }
  }
  CHECK(equiv(r.graph, r.weights, m, mw).max_abs_diff < 1e-12);
}

TEST_CASE("prune_slices keeps the edge while another consumer still reads it") {
  NodeId in = 0;
  ArchGraph g = fx::begin("prune_shared", {3, 8, 8}, &in);
  const NodeId a = fx::conv(g, in, 3);
  const NodeId b = fx::conv(g, in, 2);
  const NodeId cat = fx::join(g, {a, b}, JoinKind::kConcat);
  const NodeId c1 = fx::conv(g, cat, 4);
  const NodeId c2 = fx::conv(g, cat, 4, 1);
  fx::finish(g, fx::join(g, {c1, c2}, JoinKind::kConcat));
  const WeightStore w = weights_for(g, 7);
  const Rewritten r = prune_slices(g, w, {{a, c1}});
  CHECK(r.graph.nodes().size() == g.nodes().size());
  bool pinned = false;
  for (const SharingGroup& grp : r.weights.groups) {
    for (const SliceRef& s : grp.members) pinned = pinned || (grp.pinned && s.node == c1);
  }
  CHECK(pinned);
  const Tensor& k = r.weights.param(c1, kWeight);
  for (int o = 0; o < 4; ++o) {
    for (int c = 0; c < 3; ++c) CHECK(k.at(o, c, 1, 1) == 0.0);
  }
  CHECK(equiv(g, r.source_weights, r.graph, r.weights).max_abs_diff < 1e-12);
}

TEST_CASE("severing every input of a consumer is rejected") {
  const fx::PruneFixture f = fx::prune_graph();
  const WeightStore w = init_weights(f.graph, 0);
  CHECK_THROWS_AS(prune_slices(f.graph, w, {{f.a, f.consumer}, {f.b, f.consumer}, {f.c, f.consumer}}),
                  GraphError);
  CHECK_THROWS_AS(prune_slices(f.graph, w, {{f.a, f.concat}}), RewriteError);
}

TEST_CASE("weight-shared training trajectories coincide") {
  CHECK(fx::sharing_trajectory_gap(100, 1) < 1e-9);
}

namespace {

/// Random graph built around one rewrite site of the requested pass.
ArchGraph random_site(RewritePass pass, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x517eULL));
  NodeId in = 0;
  const int c0 = 2 + static_cast<int>(rng.below(3));
  ArchGraph g = fx::begin("site_" + std::to_string(seed), {c0, 8, 8}, &in);
  const int width = 2 + static_cast<int>(rng.below(4));
  const NodeId src = fx::conv(g, in, width, rng.bernoulli(0.5) ? 3 : 1);
  const int k = 2 + static_cast<int>(rng.below(3));
  auto branch = [&](int out) {
    NodeId y = src;
    const int depth = 1 + static_cast<int>(rng.below(3));
    for (int d = 0; d < depth; ++d) {
      if (d > 0 && rng.bernoulli(0.3)) y = fx::chain(g, y, {op::Activation{}});
      y = fx::conv(g, y, d + 1 == depth ? out : width, rng.bernoulli(0.5) ? 3 : 1);
    }
    return y;
  };
  std::vector<NodeId> br;
  NodeId tail = -1;
  if (pass == RewritePass::kSumToConcat) {
    for (int b = 0; b < k; ++b) br.push_back(b == k - 1 && rng.bernoulli(0.5) ? src : branch(width));
    tail = fx::conv(g, fx::join(g, br, JoinKind::kSum), 3 + static_cast<int>(rng.below(3)),
                    rng.bernoulli(0.5) ? 3 : 5);
  } else if (pass == RewritePass::kMeanToSumUnderBn) {
    for (int b = 0; b < k; ++b) br.push_back(branch(width));
    NodeId y = fx::join(g, br, JoinKind::kMean);
    if (rng.bernoulli(0.5)) y = fx::chain(g, y, {op::Activation{}});
    if (rng.bernoulli(0.5)) y = fx::chain(g, y, {op::Pool{rng.bernoulli(0.5) ? PoolKind::kMax : PoolKind::kAvg, 2, 2}});
    if (rng.bernoulli(0.5)) y = fx::chain(g, y, {op::Dropout{0.2}});
    tail = fx::chain(g, y, {op::BatchNorm{}});
  } else {
    const int at = static_cast<int>(rng.below(static_cast<std::uint64_t>(k)));
    for (int b = 0; b < k; ++b) br.push_back(b == at ? src : branch(1 + static_cast<int>(rng.below(4))));
    tail = fx::join(g, br, JoinKind::kConcat);
  }
  fx::finish(g, fx::chain(g, tail, {op::BatchNorm{}, op::Activation{}}), 4);
  return g;
}

}  // namespace

TEST_CASE("rewrites on random sites stay exact (seeded property)") {
  for (RewritePass pass : {RewritePass::kSumToConcat, RewritePass::kMeanToSumUnderBn,
                           RewritePass::kCanonicalizeSkips}) {
    int rewritten = 0;
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
      const ArchGraph g = random_site(pass, seed);
      const WeightStore w = weights_for(g, seed);
      CAPTURE(pass_name(pass));
      CAPTURE(seed);
      const Rewritten r = pass == RewritePass::kSumToConcat       ? sum_to_concat(g, w)
                          : pass == RewritePass::kMeanToSumUnderBn ? mean_to_sum_under_bn(g, w)
                                                                   : canonicalize_skips(g, w);
      rewritten += !r.log.empty();
      if (pass != RewritePass::kCanonicalizeSkips) CHECK_FALSE(r.log.empty());
      CHECK(equiv(g, w, r.graph, r.weights, pass == RewritePass::kMeanToSumUnderBn ? 40 : 0)
                .max_abs_diff < 1e-9);
    }
    // Skips need a stride-1 chain at an adjacent ordinal; most sites have one.
    CHECK(rewritten >= 15);
  }
}
