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

// Acceptance runner: one PASS/FAIL/INFO line per criterion. Exits non-zero
// when a gated criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fixtures.hpp"
#include "fractal/dataset.hpp"
#include "fractal/generators.hpp"
#include "fractal/nn_core.hpp"
#include "fractal/pattern_lint.hpp"
#include "fractal/rewriter.hpp"
#include "fractal/trainer.hpp"
#include "json.hpp"

using namespace fractal;
namespace fx = fractal::fixtures;

namespace {

enum class Verdict { kPass, kFail, kInfo };

struct Outcome {
  Verdict verdict = Verdict::kFail;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Outcome gate(bool ok, std::string detail) { return {ok ? Verdict::kPass : Verdict::kFail, std::move(detail)}; }

// ---------------------------------------------------------------------------
// 1. Gradient correctness

Outcome gradients() {
  struct Case {
    const char* name;
    ArchGraph graph;
  };
  std::vector<Case> cases;
  cases.push_back({"fractalnet", gen_fractalnet(FractalSpec::desk())});
  cases.push_back({"fof", gen_fof(FoFSpec::desk())});
  cases.push_back({"sbn", gen_sbn(FoFSpec::desk())});
  cases.push_back({"tsn", gen_tsn(FoFSpec::desk())});
  bool ok = true;
  std::string detail;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const ArchGraph& g = cases[i].graph;
    WeightStore w = init_weights(g, 100 + i);
    fx::perturb_bn(g, w, 100 + i);
    const Tensor x = fx::random_input(g, 2, 200 + i);
    const std::vector<int> y = fx::random_labels(2, 10, 300 + i);
    GradcheckOptions opt;
    opt.epsilon = 1e-5;
    opt.sample = 220;  // a little headroom for perturbations that flip a ReLU or max
    opt.seed = 400 + i;
    const GradcheckReport r = gradcheck(g, w, x, y, EvalContext{}, opt);
    const bool case_ok = r.checked >= 200 && r.max_rel_error < 1e-4;
    ok = ok && case_ok;
    // Diagnostics: the worst absolute gap, the worst relative error among
    // gradients above 1e-6, and how many sampled gradients fall below 1e-6.
    double abs_gap = 0.0, rel_large = 0.0;
    int small = 0;
    for (const GradcheckEntry& e : r.entries) {
      if (e.skipped) continue;
      abs_gap = std::max(abs_gap, std::abs(e.analytic - e.numeric));
      if (std::max(std::abs(e.analytic), std::abs(e.numeric)) > 1e-6) {
        rel_large = std::max(rel_large, e.rel_error);
      } else {
        ++small;
      }
    }
    detail += std::string(detail.empty() ? "" : "; ") + cases[i].name + " " +
              fmt("%.2e", r.max_rel_error) + " over " + std::to_string(r.checked) + " params";
    if (r.skipped) detail += " (" + std::to_string(r.skipped) + " at kinks skipped)";
    detail += " [max |a-n| " + fmt("%.1e", abs_gap) + ", rel-error for |g|>1e-6 " +
              fmt("%.1e", rel_large) + ", " + std::to_string(small) + " with |g|<=1e-6]";
  }
  return gate(ok, "max rel-error " + detail + " (eval mode, eps 1e-5, tol 1e-4)");
}

// ---------------------------------------------------------------------------
// 2. Rewrite equivalences

Outcome equivalences() {
  EquivalenceOptions opt;
  opt.samples = 100;
  opt.tolerance = 1e-9;
  opt.seed = 2024;
  bool ok = true;
  std::string detail;
  auto record = [&](const std::string& pass, const std::vector<double>& diffs, bool all_applied) {
    double worst = 0.0;
    for (double d : diffs) worst = std::max(worst, d);
    const bool pass_ok = all_applied && diffs.size() >= 3 && worst < opt.tolerance;
    ok = ok && pass_ok;
    detail += std::string(detail.empty() ? "" : "; ") + pass + " " + std::to_string(diffs.size()) +
              " graphs max " + fmt("%.1e", worst);
  };
  auto weights = [](const ArchGraph& g, std::uint64_t seed) {
    WeightStore w = init_weights(g, seed);
    fx::perturb_bn(g, w, seed);
    return w;
  };

  {
    std::vector<double> d;
    bool applied = true;
    for (const fx::Named& n : fx::sum_graphs()) {
      const WeightStore w = weights(n.graph, 1);
      const Rewritten r = sum_to_concat(n.graph, w);
      applied = applied && !r.log.empty();
      d.push_back(verify_equivalence(n.graph, w, r.graph, r.weights, opt).max_abs_diff);
    }
    record("sum_to_concat", d, applied);
  }
  {
    std::vector<double> d;
    bool applied = true;
    for (const fx::Named& n : fx::skip_graphs()) {
      const WeightStore w = weights(n.graph, 2);
      const Rewritten r = canonicalize_skips(n.graph, w);
      applied = applied && !r.log.empty();
      d.push_back(verify_equivalence(n.graph, w, r.graph, r.weights, opt).max_abs_diff);
    }
    record("canonicalize_skips", d, applied);
  }
  {
    std::vector<double> d;
    bool applied = true;
    auto run = [&](const ArchGraph& g, std::vector<std::pair<NodeId, NodeId>> severed) {
      const WeightStore w = weights(g, 3);
      const Rewritten r = prune_slices(g, w, severed);
      applied = applied && !r.log.front().removed_edges.empty();
      d.push_back(verify_equivalence(g, r.source_weights, r.graph, r.weights, opt).max_abs_diff);
    };
    const fx::PruneFixture f = fx::prune_graph();
    run(f.graph, {{f.a, f.consumer}});
    // The skip fixtures: sever the skip source from the Concat's consumer.
    for (const fx::Named& n : fx::skip_graphs()) {
      for (const auto& [id, kind] : n.graph.nodes()) {
        if (!is_join(kind, JoinKind::kConcat)) continue;
        const NodeId consumer = n.graph.consumers(id).front();
        for (NodeId src : n.graph.inputs(id)) {
          if (n.graph.consumers(src).size() > 1) {
            run(n.graph, {{src, consumer}});
            break;
          }
        }
      }
    }
    record("prune_slices", d, applied);
  }
  {
    std::vector<double> d;
    bool applied = true;
    EquivalenceOptions refreshed = opt;
    refreshed.refresh_bn = 50;
    for (const fx::Named& n : fx::mean_bn_graphs()) {
      const WeightStore w = weights(n.graph, 4);
      const Rewritten r = mean_to_sum_under_bn(n.graph, w);
      applied = applied && !r.log.empty();
      d.push_back(verify_equivalence(n.graph, w, r.graph, r.weights, refreshed).max_abs_diff);
    }
    record("mean_to_sum_under_bn (BN refreshed)", d, applied);
  }
  return gate(ok, detail + " [100 inputs each, tol 1e-9]");
}

// ---------------------------------------------------------------------------
// 3. Weight-sharing training equivalence

Outcome sharing() {
  const double gap = fx::sharing_trajectory_gap(100, 1);
  return gate(gap < 1e-9, "max weight gap over 100 SGD steps " + fmt("%.2e", gap) + " [tol 1e-9]");
}

// ---------------------------------------------------------------------------
// 4. Path-count oracles

Outcome paths() {
  struct Case {
    const char* name;
    ArchGraph graph;
    std::uint64_t expected;
  };
  std::vector<Case> cases;
  cases.push_back({"module C=3", gen_fractal_module(3, {3, 8, 8}, 4), 5});
  cases.push_back({"5-module FractalNet", gen_fractalnet(FractalSpec{}), 3125});
  cases.push_back({"FoF", gen_fof(FoFSpec::desk()), 905});
  bool ok = true;
  std::string detail;
  for (const Case& c : cases) {
    const BigInt dp = count_paths(c.graph);
    const std::uint64_t dfs = fx::enumerate_paths(c.graph);
    ok = ok && dp == c.expected && dfs == c.expected;
    std::ostringstream s;
    s << c.name << " dp=" << dp << " dfs=" << dfs << " (want " << c.expected << ")";
    detail += std::string(detail.empty() ? "" : ", ") + s.str();
  }
  return gate(ok, detail);
}

// ---------------------------------------------------------------------------
// 5. Schedule statistics

Outcome schedules() {
  bool ok = true;
  std::string detail;

  const ArchGraph g = gen_fractalnet(FractalSpec::desk());
  Rng rng(55);
  double dropped = 0.0, total = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    for (const auto& [join, alive] : sample_drop_path(g, 0.15, rng)) {
      for (bool a : alive) {
        dropped += !a;
        total += 1.0;
      }
    }
  }
  const double rate = dropped / total;
  ok = ok && std::abs(rate - 0.15) <= 0.01;
  detail += "drop-path " + fmt("%.4f", rate) + " over " + std::to_string(static_cast<long>(total)) +
            " branch draws";

  auto freq = [&](int branches, std::uint64_t seed) {
    FreezeDropPathConfig c;
    c.branch_count = branches;
    c.mode = FdpMode::kStochastic;
    Rng r(seed);
    std::vector<double> f(static_cast<std::size_t>(branches), 0.0);
    for (int t = 0; t < n; ++t) f[static_cast<std::size_t>(fdp_active_branch(c, t, r))] += 1.0 / n;
    return f;
  };
  const std::vector<double> two = freq(2, 56);
  const std::vector<double> three = freq(3, 57);
  const std::vector<double> want3{1.0 / 14, 4.0 / 14, 9.0 / 14};
  ok = ok && std::abs(two[0] - 0.2) <= 0.01 && std::abs(two[1] - 0.8) <= 0.01;
  for (int b = 0; b < 3; ++b) ok = ok && std::abs(three[b] - want3[b]) <= 0.01;
  detail += "; fdp 2-branch (" + fmt("%.4f", two[0]) + ", " + fmt("%.4f", two[1]) + "), 3-branch (" +
            fmt("%.4f", three[0]) + ", " + fmt("%.4f", three[1]) + ", " + fmt("%.4f", three[2]) + ")";

  bool periodic = true;
  for (int branches : {2, 3}) {
    for (int cycle : {100, 140, 333}) {
      FreezeDropPathConfig c;
      c.branch_count = branches;
      c.mode = FdpMode::kDeterministic;
      c.num_iter_per_cycle = cycle;
      Rng r(0);
      for (int t = 0; t < 4 * cycle; ++t) {
        periodic = periodic && fdp_active_branch(c, t, r) == fdp_active_branch(c, t + cycle, r);
      }
      // Each cycle is one contiguous run per branch, shallowest first.
      for (int t = 1; t < cycle; ++t) {
        periodic = periodic && fdp_active_branch(c, t, r) >= fdp_active_branch(c, t - 1, r);
      }
    }
  }
  ok = ok && periodic;
  detail += std::string("; deterministic mode ") + (periodic ? "periodic" : "NOT periodic") +
            " for cycles 100/140/333";
  return gate(ok, detail + " [n=1e5, tol 0.01]");
}

// ---------------------------------------------------------------------------
// 6. Join semantics

Outcome joins() {
  bool mean_ok = true, max_ok = true, sum_ok = true;
  std::size_t ulp3 = 0, checked3 = 0;

  // Mean with drop-path masks against the survivors, train mode.
  const ArchGraph g = gen_fractal_module(4, {3, 8, 8}, 4);
  const WeightStore w = init_weights(g, 6);
  const ArchGraph gm = gen_fractal_module(4, {3, 8, 8}, 4, {}, 10, JoinKind::kMaxout);
  const WeightStore wm = init_weights(gm, 6);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    EvalContext ctx;
    ctx.mode = Mode::kTrain;
    ctx.seed = seed;
    Rng rng(seed);
    ctx.alive = sample_drop_path(g, 0.4, rng);
    const Tensor x = fx::random_input(g, 2, seed);
    const ForwardPass pass = forward(g, w, x, ctx);
    for (const auto& [join, alive] : ctx.alive) {
      if (!pass.live.count(join)) continue;  // inside a dropped branch
      const std::vector<NodeId> in = g.inputs(join);
      Tensor expect(pass.value(join).shape());
      double k = 0.0;
      for (std::size_t b = 0; b < in.size(); ++b) {
        if (!alive[b]) continue;
        expect.add(pass.value(in[b]));
        k += 1.0;
      }
      for (double& v : expect.data()) v /= k;
      mean_ok = mean_ok && expect == pass.value(join);
    }
    for (const Mode mode : {Mode::kEval, Mode::kTrain}) {
      EvalContext mctx;
      mctx.mode = mode;
      mctx.seed = seed;
      const ForwardPass mp = forward(gm, wm, x, mctx);
      for (const auto& [id, kind] : gm.nodes()) {
        if (!is_join(kind, JoinKind::kMaxout)) continue;
        const Tensor& out = mp.value(id);
        for (NodeId b : gm.inputs(id)) {
          const Tensor& v = mp.value(b);
          for (std::size_t i = 0; i < out.size(); ++i) max_ok = max_ok && out[i] >= v[i];
        }
      }
    }
  }

  // Sum and Mean over the same branches in one pass.
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    for (int k : {2, 3, 4}) {
      NodeId in = 0;
      ArchGraph j = fx::begin("sum_mean", {3, 6, 6}, &in);
      std::vector<NodeId> br;
      for (int b = 0; b < k; ++b) br.push_back(fx::conv(j, in, 4));
      const NodeId s = fx::join(j, br, JoinKind::kSum);
      const NodeId m = fx::join(j, br, JoinKind::kMean);
      fx::finish(j, fx::join(j, {s, m}, JoinKind::kConcat));
      const ForwardPass p = forward(j, init_weights(j, seed), fx::random_input(j, 2, seed), {});
      const Tensor& sv = p.value(s);
      const Tensor& mv = p.value(m);
      for (std::size_t i = 0; i < sv.size(); ++i) {
        sum_ok = sum_ok && mv[i] == sv[i] / k;
        if (k == 3) {
          ++checked3;
          ulp3 += sv[i] != k * mv[i];
          sum_ok = sum_ok && std::abs(sv[i] - k * mv[i]) <= 2 * std::numeric_limits<double>::epsilon() * std::abs(sv[i]);
        } else {
          sum_ok = sum_ok && sv[i] == k * mv[i];
        }
      }
    }
  }
  std::string detail = std::string("mean over survivors ") + (mean_ok ? "bitwise equal" : "MISMATCH") +
                       " (20 masks); maxout >= every branch " + (max_ok ? "yes" : "NO") +
                       "; Sum == k*Mean bitwise for k=2,4 and Mean == Sum/k bitwise for k=2,3,4 " +
                       (sum_ok ? "yes" : "NO") + " (k=3: " + std::to_string(ulp3) + "/" +
                       std::to_string(checked3) + " elements differ by 1 ulp from 3*Mean)";
  return gate(mean_ok && max_ok && sum_ok, detail);
}

// ---------------------------------------------------------------------------
// 7 and 8. Desk-scale learning

struct DeskData {
  Dataset train, test;
  std::string source;
};

DeskData desk_data() {
  DeskData d;
  if (const char* dir = std::getenv("FRACTAL_CIFAR10_DIR")) {
    const std::filesystem::path p(dir);
    const Dataset train = load_cifar_files({(p / "data_batch_1.bin").string()}, CifarKind::kCifar10);
    const Dataset test = load_cifar_files({(p / "test_batch.bin").string()}, CifarKind::kCifar10);
    d.train = seeded_subset(train, 500, 1);
    d.test = seeded_subset(test, 500, 2);
    d.source = "CIFAR-10 from " + p.string();
    return d;
  }
  // No CIFAR-10 on disk: the synthetic surrogate, sent through the CIFAR
  // binary encoder and parser so the loading path is the same.
  d.train = parse_cifar(encode_cifar(synthetic_cifar(500, 10, 1), CifarKind::kCifar10), CifarKind::kCifar10);
  d.test = parse_cifar(encode_cifar(synthetic_cifar(500, 10, 2), CifarKind::kCifar10), CifarKind::kCifar10);
  d.source = "synthetic CIFAR-layout surrogate (set FRACTAL_CIFAR10_DIR for real data)";
  return d;
}

struct Shared {
  std::optional<DeskData> data;
  std::optional<TrainResult> fractalnet;
  const DeskData& get_data() {
    if (!data) data = desk_data();
    return *data;
  }
};

double window(const std::vector<double>& v, int begin, int end) {
  return std::accumulate(v.begin() + begin, v.begin() + end, 0.0) / (end - begin);
}

Outcome learning(Shared& shared) {
  const auto t0 = std::chrono::steady_clock::now();
  const DeskData& data = shared.get_data();
  const TrainConfig config = TrainConfig::desk();
  const ArchGraph fn = gen_fractalnet(FractalSpec::desk());
  const TrainResult a = train(fn, data.train, data.test, config);
  const TrainResult b = train(fn, data.train, data.test, config);
  const bool deterministic = a.weights == b.weights && a.iteration_loss == b.iteration_loss;
  double best = 0.0;
  for (const HistoryPoint& h : a.history) best = std::max(best, h.test_accuracy);
  shared.fractalnet = a;

  // SBN with one deterministic cycle over the run: stage boundaries at the
  // square-interval splits.
  ArchGraph sbn = gen_sbn(FoFSpec::desk());
  FreezeDropPathConfig& fdp = *std::get<op::Join>(sbn.node(find_fdp_join(sbn))).fdp;
  const int sbn_iters = 400;
  fdp.mode = FdpMode::kDeterministic;
  fdp.num_iter_per_cycle = sbn_iters;
  TrainConfig sc = config;
  sc.iterations = sbn_iters;
  sc.eval_interval = sbn_iters;
  const TrainResult s = train(sbn, data.train, data.test, sc);
  bool monotone = true;
  int transitions = 0;
  std::string windows;
  for (int t = 1; t < sbn_iters; ++t) {
    if (s.active_branch[t] == s.active_branch[t - 1]) continue;
    ++transitions;
    const int lo = std::max(0, t - 50), hi = std::min(sbn_iters, t + 50);
    const double before = window(s.iteration_loss, lo, t);
    const double after = window(s.iteration_loss, t, hi);
    monotone = monotone && after <= before;
    windows += " stage " + std::to_string(s.active_branch[t - 1]) + "->" +
               std::to_string(s.active_branch[t]) + " at " + std::to_string(t) + ": " +
               fmt("%.4f", before) + " -> " + fmt("%.4f", after);
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool fn_ok = best > 0.25 && deterministic;
  const bool sbn_ok = transitions > 0 && monotone;
  const bool ok = fn_ok && sbn_ok && seconds < 600.0;
  return gate(ok, std::string("[fractalnet ") + (fn_ok ? "ok" : "FAIL") + ", sbn " + (sbn_ok ? "ok" : "FAIL") +
                      ", time " + (seconds < 600.0 ? "ok" : "FAIL") + "] FractalNet-desk best test acc " + fmt("%.3f", best) + " (final " +
                      fmt("%.3f", a.history.back().test_accuracy) + ") in " +
                      std::to_string(config.iterations) + " it, seed " + std::to_string(config.seed) +
                      ", rerun " + (deterministic ? "bitwise identical" : "DIFFERS") +
                      "; SBN 50-it window loss" + windows + "; " + fmt("%.0f", seconds) +
                      " s [data: " + data.source + "]");
}

Outcome speed(Shared& shared) {
  const DeskData& data = shared.get_data();
  const TrainConfig config = TrainConfig::desk();
  const int quarter = config.iterations / 4;
  if (!shared.fractalnet) shared.fractalnet = train(gen_fractalnet(FractalSpec::desk()), data.train, data.test, config);
  double fn_acc = -1.0;
  for (const HistoryPoint& h : shared.fractalnet->history) {
    if (h.iteration == quarter) fn_acc = h.test_accuracy;
  }
  // The first quarter of the budget lies before every milestone, so a
  // quarter-length run with no milestones follows the same schedule.
  TrainConfig fc = config;
  fc.iterations = quarter;
  fc.eval_interval = quarter;
  fc.lr_milestones.clear();
  const TrainResult fof = train(gen_fof(FoFSpec::desk()), data.train, data.test, fc);
  const double fof_acc = fof.history.back().test_accuracy;
  return {Verdict::kInfo, "test acc at iteration " + std::to_string(quarter) + ": FoF " +
                              fmt("%.3f", fof_acc) + " vs FractalNet " + fmt("%.3f", fn_acc) + " (" +
                              (fof_acc >= fn_acc ? "FoF ahead or equal" : "FractalNet ahead") +
                              "), seed " + std::to_string(config.seed) + "; informational, not gated"};
}

// ---------------------------------------------------------------------------
// 9. Linter fixtures

Outcome linter() {
  bool ok = true;
  std::string detail = "baselines:";
  const std::vector<std::pair<std::string, ArchGraph>> base{
      {"fractalnet", gen_fractalnet(FractalSpec::desk())},
      {"fof", gen_fof(FoFSpec::desk())},
      {"sbn", gen_sbn(FoFSpec::desk())},
      {"tsn", gen_tsn(FoFSpec::desk())}};
  for (const auto& [name, g] : base) {
    const PatternReport r = lint(g);
    bool pass = true;
    for (int id : {5, 8, 9, 10}) pass = pass && r.entry(id).status == PatternStatus::kPass;
    ok = ok && pass;
    detail += " " + name + (pass ? " ok" : " FAILS");
  }
  detail += "; fixtures:";
  const std::vector<std::pair<ArchGraph, int>> broken{{fx::lint_chain(), 2},
                                                      {fx::lint_long_skip(), 8},
                                                      {fx::lint_missing_bn(), 9},
                                                      {fx::lint_narrow_input(), 10}};
  for (const auto& [g, rule] : broken) {
    const std::vector<int> failing = lint(g).failing();
    const bool exact = failing == std::vector<int>{rule};
    ok = ok && exact;
    std::string got;
    for (int f : failing) got += (got.empty() ? "P" : ",P") + std::to_string(f);
    detail += " " + g.name() + " fails {" + got + "}" + (exact ? "" : " (want P" + std::to_string(rule) + ")");
  }
  return gate(ok, detail);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria runner"};
  std::vector<int> only;
  std::vector<int> expect_fail;
  std::string json_path;
  app.add_option("criteria", only, "Criteria to run (default: all)")->check(CLI::Range(1, 9));
  app.add_option("--expect-fail", expect_fail,
                 "Criteria known to fail; exit status is 0 only when exactly these fail")
      ->check(CLI::Range(1, 9));
  app.add_option("--json", json_path, "Also write the results as JSON");
  CLI11_PARSE(app, argc, argv);
  const std::set<int> selected(only.begin(), only.end());

  Shared shared;
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"gradient correctness", gradients},
      {"rewrite equivalences", equivalences},
      {"weight-sharing training equivalence", sharing},
      {"path-count oracles", paths},
      {"schedule statistics", schedules},
      {"join semantics", joins},
      {"desk-scale learning", [&] { return learning(shared); }},
      {"relative speed", [&] { return speed(shared); }},
      {"linter fixtures", linter},
  };

  nlohmann::json results = nlohmann::json::array();
  std::set<int> failed;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {Verdict::kFail, std::string("exception: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const char* tag = o.verdict == Verdict::kPass ? "PASS" : o.verdict == Verdict::kFail ? "FAIL" : "INFO";
    if (o.verdict == Verdict::kFail) failed.insert(id);
    std::printf("[%s] %d %s: %s (%.1f s)\n", tag, id, criteria[i].first, o.detail.c_str(), s);
    std::fflush(stdout);
    results.push_back({{"criterion", id},
                       {"name", criteria[i].first},
                       {"status", tag},
                       {"detail", o.detail},
                       {"seconds", s}});
  }
  if (!json_path.empty()) std::ofstream(json_path) << results.dump(1) << "\n";
  std::set<int> expected;
  for (int id : expect_fail) {
    if (selected.empty() || selected.count(id)) expected.insert(id);
  }
  if (!expected.empty()) {
    std::string list;
    for (int id : expected) list += (list.empty() ? "" : ",") + std::to_string(id);
    std::printf("expected failures: {%s}; %s\n", list.c_str(),
                failed == expected ? "observed failures match" : "observed failures DIFFER");
  }
  return failed == expected ? 0 : 1;
}
