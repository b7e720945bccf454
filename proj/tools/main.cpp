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

// `fractal`: generate, lint, rewrite, check and train architecture graphs.

#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fractal/dataset.hpp"
#include "fractal/generators.hpp"
#include "fractal/graph_ir.hpp"
#include "fractal/nn_core.hpp"
#include "fractal/pattern_lint.hpp"
#include "fractal/rewriter.hpp"
#include "fractal/trainer.hpp"
#include "fractal/weights.hpp"
#include "io.hpp"
#include "json.hpp"
#include "plot.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fractal;
using namespace fractal::cli;

namespace {

// Options every subcommand shares.
struct Common {
  std::uint64_t seed = 0;
  std::string out_dir;
  std::string output;
};

void add_common(CLI::App* app, Common& c, const std::string& default_output) {
  c.output = default_output;
  app->add_option("--seed", c.seed, "Seed for every random draw")->capture_default_str();
  app->add_option("-o,--output", c.output, "Primary output file")->capture_default_str();
  app->add_option("--out-dir", c.out_dir, "Directory for relative outputs (default: $FRACTAL_OUT_DIR or .)");
}

// `dir/name.json` -> `dir/name<suffix>`.
std::string sibling(const std::string& path, const std::string& suffix) {
  fs::path p(path);
  return (p.parent_path() / (p.stem().string() + suffix)).string();
}

ArchGraph load_graph(const std::string& path) {
  ArchGraph g = deserialize(read_file(path));
  validate_or_throw(g);
  return g;
}

std::string graph_hash(const ArchGraph& g) { return hex64(fnv1a(serialize(g))); }

// Explicit file, else the `<graph>.weights.json` sidecar, else a seeded init.
WeightStore load_weights(const ArchGraph& g, const std::string& graph_path, const std::string& explicit_path,
                         std::uint64_t seed, std::string* origin = nullptr) {
  std::string path = explicit_path;
  if (path.empty() && fs::exists(sibling(graph_path, ".weights.json"))) path = sibling(graph_path, ".weights.json");
  WeightStore w;
  if (path.empty()) {
    w = init_weights(g, seed);
    if (origin) *origin = "init(seed=" + std::to_string(seed) + ")";
  } else {
    w = deserialize_weights(read_file(path));
    if (origin) *origin = path;
  }
  check_weights(g, w);
  return w;
}

Dataset load_dataset(const std::string& path) { return decode_dataset(read_file(path)); }

JoinKind parse_join(const std::string& s) {
  if (s == "mean") return JoinKind::kMean;
  if (s == "concat") return JoinKind::kConcat;
  if (s == "sum") return JoinKind::kSum;
  if (s == "maxout") return JoinKind::kMaxout;
  throw CLI::ValidationError("join", "unknown join kind '" + s + "'");
}

TensorShape parse_shape(const std::string& s) {
  TensorShape t;
  char x1 = 0, x2 = 0;
  std::istringstream in(s);
  if (!(in >> t.channels >> x1 >> t.height >> x2 >> t.width) || x1 != 'x' || x2 != 'x') {
    throw CLI::ValidationError("shape", "expected CxHxW, got '" + s + "'");
  }
  return t;
}

// ---------------------------------------------------------------------------

struct GenerateArgs {
  std::string arch;
  bool desk = false;
  int columns = 0, meta_columns = 0, classes = 0;
  std::vector<int> channels;
  std::vector<double> dropout;
  std::string input_shape, downsample_join, pool;
  bool fdp_deterministic = false;
  int fdp_cycle = 0;
  std::string fdp_interval;
};

int cmd_generate(const GenerateArgs& a, const Common& c, RunManifest& m) {
  FractalSpec fs = a.desk ? FractalSpec::desk() : FractalSpec{};
  FoFSpec fof = a.desk ? FoFSpec::desk() : FoFSpec{};
  FractalSpec& spec = a.arch == "fractalnet" ? fs : fof.module;
  if (a.columns) spec.columns = a.columns;
  if (!a.channels.empty()) spec.module_channels = a.channels;
  if (!a.dropout.empty()) spec.dropout_rates = a.dropout;
  if (a.classes) spec.classes = a.classes;
  if (!a.input_shape.empty()) spec.input_shape = parse_shape(a.input_shape);
  if (!a.downsample_join.empty()) spec.downsample_join = parse_join(a.downsample_join);
  if (a.pool == "avg") spec.pool_kind = PoolKind::kAvg;
  if (a.meta_columns) fof.meta_columns = a.meta_columns;
  if (a.fdp_deterministic) fof.fdp.mode = FdpMode::kDeterministic;
  if (a.fdp_cycle) fof.fdp.num_iter_per_cycle = a.fdp_cycle;
  if (a.fdp_interval == "equal") fof.fdp.interval = FdpInterval::kEqual;

  ArchGraph g;
  if (a.arch == "fractalnet") g = gen_fractalnet(fs);
  else if (a.arch == "fof") g = gen_fof(fof);
  else if (a.arch == "sbn") g = gen_sbn(fof);
  else g = gen_tsn(fof);

  const std::string out = resolve_output(c.output, c.out_dir);
  const std::string dot = sibling(out, ".dot");
  write_atomic(out, serialize(g));
  write_atomic(dot, to_dot(g));
  m.graph_hash = graph_hash(g);
  m.config = {{"arch", a.arch}, {"desk", a.desk}, {"columns", spec.columns},
              {"module_channels", spec.module_channels}, {"dropout", spec.dropout_rates},
              {"classes", spec.classes}, {"input", spec.input_shape.to_string()},
              {"downsample_join", join_kind_name(spec.downsample_join)}};
  if (a.arch != "fractalnet") m.config["meta_columns"] = fof.meta_columns;
  m.outputs = {out, dot};
  const ValidationReport v = validate(g);
  std::printf("%s: %zu nodes, %zu edges, %s paths, output %s -> %s\n", g.name().c_str(), g.size(),
              g.edges().size(), count_paths(g).str().c_str(), v.shape(g.output_id()).to_string().c_str(),
              out.c_str());
  write_manifest(m, out);
  return 0;
}

// ---------------------------------------------------------------------------

struct LoadArgs {
  std::vector<std::string> files;
  bool cifar100 = false;
  std::size_t subset = 0;
  std::string stats;
  bool synthetic = false;
  std::size_t synthetic_count = 500;
};

int cmd_load_cifar(const LoadArgs& a, const Common& c, RunManifest& m) {
  const CifarKind kind = a.cifar100 ? CifarKind::kCifar100 : CifarKind::kCifar10;
  Dataset d;
  if (a.synthetic) {
    d = parse_cifar(encode_cifar(synthetic_cifar(a.synthetic_count, 10, c.seed), CifarKind::kCifar10),
                    CifarKind::kCifar10);
    d.source = "synthetic";
  } else {
    if (a.files.empty()) throw CLI::ValidationError("files", "no CIFAR files given (or pass --synthetic)");
    d = load_cifar_files(a.files, kind);
  }
  if (a.subset) d = seeded_subset(d, a.subset, c.seed);

  ChannelStats stats;
  if (a.stats.empty()) {
    stats = channel_stats(d);
  } else {
    const json j = json::parse(read_file(a.stats));
    stats.mean = j.at("mean").get<std::vector<double>>();
    stats.stddev = j.at("std").get<std::vector<double>>();
  }
  standardize(d, stats);

  const std::string out = resolve_output(c.output, c.out_dir);
  const std::string stats_out = sibling(out, ".stats.json");
  write_atomic(out, encode_dataset(d));
  write_atomic(stats_out, stats_json(stats));
  m.config = {{"files", a.files}, {"cifar100", a.cifar100}, {"subset", a.subset},
              {"stats_from", a.stats}, {"synthetic", a.synthetic}};
  m.outputs = {out, stats_out};
  std::printf("%zu images of %s, %d classes -> %s\n", d.size(), d.shape.to_string().c_str(), d.classes,
              out.c_str());
  write_manifest(m, out);
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string graph, train_data, test_data, weights;
  int iterations = 0, batch = 0, eval_interval = 0;
  double lr = -1.0, drop_path = -1.0;
  bool flip = false;
};

int cmd_train(const TrainArgs& a, const Common& c, RunManifest& m) {
  const ArchGraph g = load_graph(a.graph);
  TrainConfig cfg = TrainConfig::desk();
  cfg.seed = c.seed;
  if (a.iterations) cfg.iterations = a.iterations;
  if (a.batch) cfg.batch_size = a.batch;
  if (a.eval_interval) cfg.eval_interval = a.eval_interval;
  if (a.lr >= 0.0) cfg.base_lr = a.lr;
  if (a.drop_path >= 0.0) cfg.local_drop_path_rate = a.drop_path;
  cfg.horizontal_flip = a.flip;
  cfg.check();

  std::optional<WeightStore> initial;
  if (!a.weights.empty()) initial = load_weights(g, a.graph, a.weights, c.seed);
  const Dataset train_set = load_dataset(a.train_data);
  const Dataset test_set = load_dataset(a.test_data);

  const int report = std::max(1, cfg.iterations / 20);
  const TrainResult r = train(g, train_set, test_set, cfg, initial, [&](int it, double loss) {
    if ((it + 1) % report == 0) std::fprintf(stderr, "iter %d loss %.4f\n", it + 1, loss);
  });

  const std::string out = resolve_output(c.output, c.out_dir);
  const std::string wout = sibling(out, ".weights.json");
  write_atomic(out, history_csv(r.history));
  write_atomic(wout, serialize_weights(r.weights));
  m.graph_hash = graph_hash(g);
  m.config = {{"graph", a.graph}, {"train", a.train_data}, {"test", a.test_data},
              {"base_lr", cfg.base_lr}, {"iterations", cfg.iterations}, {"batch_size", cfg.batch_size},
              {"drop_path", cfg.local_drop_path_rate}, {"eval_interval", cfg.eval_interval},
              {"horizontal_flip", cfg.horizontal_flip}, {"initial_weights", a.weights}};
  m.outputs = {out, wout};
  for (const HistoryPoint& h : r.history) {
    std::printf("%6d  loss %.4f  test acc %.4f\n", h.iteration, h.loss, h.test_accuracy);
  }
  write_manifest(m, out);
  return 0;
}

// ---------------------------------------------------------------------------

struct GradcheckArgs {
  std::string graph, weights, mode = "eval";
  double epsilon = 1e-5, tolerance = 1e-4;
  std::size_t sample = 200;
  int batch = 2;
};

int cmd_gradcheck(const GradcheckArgs& a, const Common& c, RunManifest& m) {
  const ArchGraph g = load_graph(a.graph);
  std::string origin;
  const WeightStore w = load_weights(g, a.graph, a.weights, c.seed, &origin);
  const TensorShape s = std::get<op::Input>(g.node(g.input_id())).shape;
  const int classes = std::get<op::Predict>(g.node(g.output_id())).classes;
  Rng rng(mix_seed(c.seed, 0x9cULL));
  Tensor x({a.batch, s.channels, s.height, s.width});
  for (double& v : x.data()) v = rng.normal();
  std::vector<int> labels;
  for (int i = 0; i < a.batch; ++i) labels.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(classes))));

  EvalContext ctx;
  ctx.seed = c.seed;
  GradcheckOptions opt;
  opt.epsilon = a.epsilon;
  opt.tolerance = a.tolerance;
  opt.sample = a.sample;
  opt.seed = c.seed;
  if (a.mode == "train") {
    ctx.mode = Mode::kTrain;
    opt.exclude_names = {"bias"};  // exact zero ahead of batch-statistics BN
  }
  const GradcheckReport r = gradcheck(g, w, x, labels, ctx, opt);

  json entries = json::array();
  for (const GradcheckEntry& e : r.entries) {
    entries.push_back({{"node", e.node}, {"param", e.param}, {"index", e.index}, {"analytic", e.analytic},
                       {"numeric", e.numeric}, {"rel_error", e.rel_error}, {"skipped", e.skipped}});
  }
  const json report = {{"graph", g.name()}, {"weights", origin}, {"mode", a.mode},
                       {"epsilon", a.epsilon}, {"tolerance", a.tolerance}, {"checked", r.checked},
                       {"skipped", r.skipped}, {"max_rel_error", r.max_rel_error}, {"pass", r.pass},
                       {"entries", entries}};
  const std::string out = resolve_output(c.output, c.out_dir);
  write_atomic(out, report.dump(1) + "\n");
  m.graph_hash = graph_hash(g);
  m.config = {{"graph", a.graph}, {"weights", origin}, {"mode", a.mode}, {"epsilon", a.epsilon},
              {"tolerance", a.tolerance}, {"sample", a.sample}, {"batch", a.batch}};
  m.outputs = {out};
  m.exit_code = r.pass ? 0 : 1;
  std::printf("%s: %zu checked, %zu skipped, max rel-error %.3e (tol %.1e) %s\n", g.name().c_str(), r.checked,
              r.skipped, r.max_rel_error, a.tolerance, r.pass ? "PASS" : "FAIL");
  write_manifest(m, out);
  return m.exit_code;
}

// ---------------------------------------------------------------------------

struct LintArgs {
  std::string graph;
  long min_paths = 2;
  int max_bypass = 64;
  double drop_path = -1.0;
  int iterations = 0;
  bool flip = false;
  bool json_stdout = false;
};

int cmd_lint(const LintArgs& a, const Common& c, RunManifest& m) {
  const ArchGraph g = load_graph(a.graph);
  LintThresholds t;
  t.min_paths = a.min_paths;
  t.max_bypass = a.max_bypass;
  std::optional<LintTrainingInfo> info;
  if (a.drop_path >= 0.0 || a.iterations || a.flip) {
    info = LintTrainingInfo{std::max(0.0, a.drop_path), a.iterations, a.flip};
  }
  const PatternReport r = lint(g, t, info);
  const std::string out = resolve_output(c.output, c.out_dir);
  const std::string j = report_json(r);
  write_atomic(out, j);
  std::fputs((a.json_stdout ? j : report_text(r)).c_str(), stdout);
  m.graph_hash = graph_hash(g);
  m.config = {{"graph", a.graph}, {"min_paths", a.min_paths}, {"max_bypass", a.max_bypass}};
  if (info) m.config["training"] = {{"drop_path", info->drop_path_rate}, {"iterations", info->iterations},
                                    {"horizontal_flip", info->horizontal_flip}};
  m.outputs = {out};
  m.exit_code = r.ok() ? 0 : 1;
  write_manifest(m, out);
  return m.exit_code;
}

// ---------------------------------------------------------------------------

struct NormalizeArgs {
  std::string graph, weights, plan;
  std::vector<std::string> passes;
  std::vector<std::string> sever;
};

int cmd_normalize(const NormalizeArgs& a, const Common& c, RunManifest& m) {
  const ArchGraph g = load_graph(a.graph);
  std::string origin;
  const WeightStore w = load_weights(g, a.graph, a.weights, c.seed, &origin);
  RewritePlan plan;
  if (!a.plan.empty()) plan = parse_plan(read_file(a.plan));
  for (const std::string& p : a.passes) plan.passes.push_back(parse_pass(p));
  for (const std::string& s : a.sever) {
    const auto colon = s.find(':');
    if (colon == std::string::npos) throw CLI::ValidationError("--sever", "expected PRODUCER:CONSUMER, got " + s);
    plan.severed.emplace_back(std::stoi(s.substr(0, colon)), std::stoi(s.substr(colon + 1)));
  }
  if (plan.passes.empty()) throw CLI::ValidationError("plan", "no passes given (use --plan or --pass)");
  plan.log.clear();
  const Rewritten r = apply_plan(g, w, plan);

  const std::string out = resolve_output(c.output, c.out_dir);
  const std::string wout = sibling(out, ".weights.json");
  const std::string src = sibling(out, ".source.json");
  const std::string src_w = sibling(out, ".source.weights.json");
  const std::string plan_out = sibling(out, ".plan.json");
  write_atomic(out, serialize(r.graph));
  write_atomic(wout, serialize_weights(r.weights));
  // The source graph with the weights under which the rewrite is exact.
  write_atomic(src, serialize(g));
  write_atomic(src_w, serialize_weights(r.source_weights));
  write_atomic(plan_out, plan_json(plan));
  m.graph_hash = graph_hash(g);
  m.config = json::parse(plan_json(plan));
  m.config["graph"] = a.graph;
  m.config["weights"] = origin;
  m.outputs = {out, wout, src, src_w, plan_out};
  for (const AppliedRewrite& e : plan.log) {
    std::printf("%-22s target %-4d %s\n", std::string(pass_name(e.pass)).c_str(), e.target, e.note.c_str());
  }
  std::printf("%zu rewrites: %zu -> %zu nodes, %s -> %s paths -> %s\n", plan.log.size(), g.size(),
              r.graph.size(), count_paths(g).str().c_str(), count_paths(r.graph).str().c_str(), out.c_str());
  write_manifest(m, out);
  return 0;
}

// ---------------------------------------------------------------------------

struct EquivArgs {
  std::string a, b, weights_a, weights_b;
  double tolerance = 1e-9;
  int samples = 100, refresh_bn = 0;
};

int cmd_equiv(const EquivArgs& a, const Common& c, RunManifest& m) {
  const ArchGraph ga = load_graph(a.a);
  const ArchGraph gb = load_graph(a.b);
  std::string oa, ob;
  const WeightStore wa = load_weights(ga, a.a, a.weights_a, c.seed, &oa);
  const WeightStore wb = load_weights(gb, a.b, a.weights_b, c.seed, &ob);
  EquivalenceOptions opt;
  opt.samples = a.samples;
  opt.tolerance = a.tolerance;
  opt.seed = c.seed;
  opt.refresh_bn = a.refresh_bn;
  const EquivalenceReport r = verify_equivalence(ga, wa, gb, wb, opt);

  const std::string out = resolve_output(c.output, c.out_dir);
  const json report = {{"a", a.a}, {"b", a.b}, {"weights_a", oa}, {"weights_b", ob},
                       {"samples", r.samples}, {"max_abs_diff", r.max_abs_diff},
                       {"tolerance", a.tolerance}, {"pass", r.pass}};
  write_atomic(out, report.dump(1) + "\n");
  m.graph_hash = graph_hash(ga) + ":" + graph_hash(gb);
  m.config = {{"a", a.a}, {"b", a.b}, {"weights_a", oa}, {"weights_b", ob}, {"tolerance", a.tolerance},
              {"samples", a.samples}, {"refresh_bn", a.refresh_bn}};
  m.outputs = {out};
  m.exit_code = r.pass ? 0 : 1;
  std::printf("max |f_a - f_b| = %.3e over %d inputs (tol %.1e): %s\n", r.max_abs_diff, r.samples, a.tolerance,
              r.pass ? "EQUIVALENT" : "DIFFERENT");
  write_manifest(m, out);
  return m.exit_code;
}

// ---------------------------------------------------------------------------

int cmd_paths(const std::string& graph_path, const Common& c, RunManifest& m) {
  const ArchGraph g = load_graph(graph_path);
  const std::string n = count_paths(g).str();
  const std::string out = resolve_output(c.output, c.out_dir);
  write_atomic(out, json({{"graph", g.name()}, {"paths", n}}).dump(1) + "\n");
  m.graph_hash = graph_hash(g);
  m.config = {{"graph", graph_path}};
  m.outputs = {out};
  std::printf("%s\n", n.c_str());
  write_manifest(m, out);
  return 0;
}

// ---------------------------------------------------------------------------

struct PlotArgs {
  std::vector<std::string> csv;
  std::vector<std::string> labels;
  std::string title = "Test accuracy";
};

int cmd_plot(const PlotArgs& a, const Common& c, RunManifest& m) {
  if (!a.labels.empty() && a.labels.size() != a.csv.size()) {
    throw CLI::ValidationError("--label", "give one label per history file");
  }
  std::vector<Series> series;
  for (std::size_t i = 0; i < a.csv.size(); ++i) {
    Series s;
    s.label = a.labels.empty() ? fs::path(a.csv[i]).stem().string() : a.labels[i];
    s.points = parse_history_csv(read_file(a.csv[i]));
    series.push_back(std::move(s));
  }
  const std::string out = resolve_output(c.output, c.out_dir);
  write_atomic(out, accuracy_svg(series, a.title));
  m.config = {{"inputs", a.csv}, {"labels", a.labels}, {"title", a.title}};
  m.outputs = {out};
  std::printf("%zu series -> %s\n", series.size(), out.c_str());
  write_manifest(m, out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fractal architecture toolkit: generate, lint, rewrite, verify and train CNN graphs."};
  app.require_subcommand(1);
  app.set_version_flag("--version", FRACTAL_TOOL_VERSION);

  // One options block per subcommand so defaults do not collide; the chosen
  // one is copied into `common` after parsing.
  std::map<std::string, Common> commons;
  Common common;
  std::function<int(RunManifest&)> run;

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Generate an architecture graph (JSON + DOT)");
  add_common(g, commons[g->get_name()], "graph.json");
  g->add_option("arch", gen.arch, "fractalnet | fof | sbn | tsn")
      ->required()
      ->check(CLI::IsMember({"fractalnet", "fof", "sbn", "tsn"}));
  g->add_flag("--desk", gen.desk, "Desk-scale preset");
  g->add_option("--columns", gen.columns, "Columns per fractal module");
  g->add_option("--channels", gen.channels, "Output channels per module stage")->delimiter(',');
  g->add_option("--dropout", gen.dropout, "Dropout rate per module stage")->delimiter(',');
  g->add_option("--classes", gen.classes, "Number of classes");
  g->add_option("--input", gen.input_shape, "Input shape CxHxW");
  g->add_option("--downsample-join", gen.downsample_join, "Join at module bottoms: mean | concat")
      ->check(CLI::IsMember({"mean", "concat"}));
  g->add_option("--pool", gen.pool, "max | avg")->check(CLI::IsMember({"max", "avg"}));
  g->add_option("--meta-columns", gen.meta_columns, "Meta columns (fof/sbn/tsn)");
  g->add_flag("--fdp-deterministic", gen.fdp_deterministic, "Deterministic freeze-drop-path (sbn/tsn)");
  g->add_option("--fdp-cycle", gen.fdp_cycle, "Iterations per freeze-drop-path cycle");
  g->add_option("--fdp-interval", gen.fdp_interval, "square | equal")->check(CLI::IsMember({"square", "equal"}));
  g->callback([&] { run = [&](RunManifest& m) { return cmd_generate(gen, common, m); }; });

  LoadArgs load;
  auto* l = app.add_subcommand("load-cifar", "Convert CIFAR binary batches to the internal dataset format");
  add_common(l, commons[l->get_name()], "dataset.bin");
  l->add_option("files", load.files, "CIFAR binary batch files");
  l->add_flag("--cifar100", load.cifar100, "Records carry coarse and fine labels");
  l->add_option("--subset", load.subset, "Keep this many images after a seeded shuffle");
  l->add_option("--stats", load.stats, "Standardize with these stats (e.g. the training set's)");
  l->add_flag("--synthetic", load.synthetic, "Use the synthetic CIFAR-layout surrogate instead of files");
  l->add_option("--synthetic-count", load.synthetic_count, "Surrogate size")->capture_default_str();
  l->callback([&] { run = [&](RunManifest& m) { return cmd_load_cifar(load, common, m); }; });

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a graph with drop-path / freeze-drop-path (desk defaults)");
  add_common(t, commons[t->get_name()], "history.csv");
  t->add_option("graph", tr.graph, "Graph JSON")->required()->check(CLI::ExistingFile);
  t->add_option("--train", tr.train_data, "Training dataset (internal format)")->required()->check(CLI::ExistingFile);
  t->add_option("--test", tr.test_data, "Test dataset (internal format)")->required()->check(CLI::ExistingFile);
  t->add_option("--weights", tr.weights, "Initial weights (default: seeded init)");
  t->add_option("--iterations", tr.iterations, "Iterations (default 2000)");
  t->add_option("--batch", tr.batch, "Minibatch size (default 25)");
  t->add_option("--lr", tr.lr, "Base learning rate (default 0.05)");
  t->add_option("--drop-path", tr.drop_path, "Local drop-path rate (default 0.15)");
  t->add_option("--eval-interval", tr.eval_interval, "Iterations between evaluations (default 250)");
  t->add_flag("--flip", tr.flip, "Random horizontal flips");
  t->callback([&] { run = [&](RunManifest& m) { return cmd_train(tr, common, m); }; });

  GradcheckArgs gc;
  auto* gcs = app.add_subcommand("gradcheck", "Finite-difference check of the backward pass");
  add_common(gcs, commons[gcs->get_name()], "gradcheck.json");
  gcs->add_option("graph", gc.graph, "Graph JSON")->required()->check(CLI::ExistingFile);
  gcs->add_option("--weights", gc.weights, "Weights (default: sidecar or seeded init)");
  gcs->add_option("--epsilon", gc.epsilon, "Central-difference step")->capture_default_str();
  gcs->add_option("--tol", gc.tolerance, "Relative-error tolerance")->capture_default_str();
  gcs->add_option("--sample", gc.sample, "Parameters to sample (0 = all)")->capture_default_str();
  gcs->add_option("--batch", gc.batch, "Random inputs in the batch")->capture_default_str();
  gcs->add_option("--mode", gc.mode, "eval | train")->check(CLI::IsMember({"eval", "train"}));
  gcs->callback([&] { run = [&](RunManifest& m) { return cmd_gradcheck(gc, common, m); }; });

  LintArgs li;
  auto* lc = app.add_subcommand("lint", "Check a graph against the design patterns");
  add_common(lc, commons[lc->get_name()], "lint.json");
  lc->add_option("graph", li.graph, "Graph JSON")->required()->check(CLI::ExistingFile);
  lc->add_option("--min-paths", li.min_paths, "Minimum input-output path count")->capture_default_str();
  lc->add_option("--max-bypass", li.max_bypass, "Bypass length that fails")->capture_default_str();
  lc->add_option("--drop-path", li.drop_path, "Training drop-path rate (advisory patterns)");
  lc->add_option("--iterations", li.iterations, "Training iterations (advisory patterns)");
  lc->add_flag("--flip", li.flip, "Training uses horizontal flips (advisory patterns)");
  lc->add_flag("--json", li.json_stdout, "Print JSON instead of text");
  lc->callback([&] { run = [&](RunManifest& m) { return cmd_lint(li, common, m); }; });

  NormalizeArgs no;
  auto* nc = app.add_subcommand("normalize", "Apply a rewrite plan; emit graph, weights and plan log");
  add_common(nc, commons[nc->get_name()], "normalized.json");
  nc->add_option("graph", no.graph, "Graph JSON")->required()->check(CLI::ExistingFile);
  nc->add_option("--weights", no.weights, "Weights (default: sidecar or seeded init)");
  nc->add_option("--plan", no.plan, "Plan JSON");
  nc->add_option("--pass", no.passes, "Pass to append: sum_to_concat, mean_to_sum_under_bn, "
                                      "canonicalize_skips, prune_slices");
  nc->add_option("--sever", no.sever, "PRODUCER:CONSUMER pair for prune_slices");
  nc->callback([&] { run = [&](RunManifest& m) { return cmd_normalize(no, common, m); }; });

  EquivArgs eq;
  auto* ec = app.add_subcommand("equiv", "Compare two graphs' eval-mode outputs on seeded inputs");
  add_common(ec, commons[ec->get_name()], "equiv.json");
  ec->add_option("a", eq.a, "First graph JSON")->required()->check(CLI::ExistingFile);
  ec->add_option("b", eq.b, "Second graph JSON")->required()->check(CLI::ExistingFile);
  ec->add_option("--weights-a", eq.weights_a, "Weights of a (default: sidecar or seeded init)");
  ec->add_option("--weights-b", eq.weights_b, "Weights of b (default: sidecar or seeded init)");
  ec->add_option("--tol", eq.tolerance, "Max absolute output difference")->capture_default_str();
  ec->add_option("--samples", eq.samples, "Random inputs")->capture_default_str();
  ec->add_option("--refresh-bn", eq.refresh_bn, "Recompute BN statistics on this many shared inputs first");
  ec->callback([&] { run = [&](RunManifest& m) { return cmd_equiv(eq, common, m); }; });

  std::string paths_graph;
  auto* pc = app.add_subcommand("paths", "Count input-to-output paths");
  add_common(pc, commons[pc->get_name()], "paths.json");
  pc->add_option("graph", paths_graph, "Graph JSON")->required()->check(CLI::ExistingFile);
  pc->callback([&] { run = [&](RunManifest& m) { return cmd_paths(paths_graph, common, m); }; });

  PlotArgs pl;
  auto* plc = app.add_subcommand("plot", "SVG of test accuracy against iteration");
  add_common(plc, commons[plc->get_name()], "accuracy.svg");
  plc->add_option("csv", pl.csv, "History CSV files, one series each")->required()->check(CLI::ExistingFile);
  plc->add_option("--label", pl.labels, "Series label (repeat once per file)");
  plc->add_option("--title", pl.title, "Plot title")->capture_default_str();
  plc->callback([&] { run = [&](RunManifest& m) { return cmd_plot(pl, common, m); }; });

  CLI11_PARSE(app, argc, argv);

  RunManifest manifest;
  manifest.command = app.get_subcommands().front()->get_name();
  common = commons.at(manifest.command);
  manifest.argv.assign(argv, argv + argc);
  manifest.seed = common.seed;
  manifest.started_at = utc_now();
  try {
    return run(manifest);
  } catch (const CLI::Error& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "fractal %s: error: %s\n", manifest.command.c_str(), e.what());
    return 2;
  }
}
