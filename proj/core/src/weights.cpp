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

#include "fractal/weights.hpp"

#include <algorithm>
#include <cmath>

#include "fractal/random.hpp"
#include "json.hpp"

namespace fractal {

Tensor& WeightStore::param(NodeId node, std::string_view name) {
  auto it = params.find(node);
  if (it == params.end()) throw GraphError("no parameters for node " + std::to_string(node));
  auto jt = it->second.find(name);
  if (jt == it->second.end()) {
    throw GraphError("node " + std::to_string(node) + " has no parameter '" + std::string(name) +
                     "'");
  }
  return jt->second;
}

const Tensor& WeightStore::param(NodeId node, std::string_view name) const {
  return const_cast<WeightStore*>(this)->param(node, name);
}

std::size_t WeightStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [id, set] : params) {
    for (const auto& [name, t] : set) n += t.size();
  }
  return n;
}

std::size_t WeightStore::independent_parameter_count() const {
  std::size_t n = parameter_count();
  for (const SharingGroup& g : groups) {
    if (g.members.empty()) continue;
    const std::size_t per = slice_indices(param(g.members[0].node, g.members[0].param),
                                          g.members[0]).size();
    n -= g.pinned ? per * g.members.size() : per * (g.members.size() - 1);
  }
  return n;
}

std::vector<std::size_t> slice_indices(const Tensor& tensor, const SliceRef& slice) {
  if (tensor.rank() < 1) throw GraphError("cannot slice a scalar parameter");
  const int rows = tensor.dim(0);
  if (slice.out_begin < 0 || slice.out_end > rows || slice.out_begin >= slice.out_end) {
    throw GraphError("slice rows out of range for node " + std::to_string(slice.node));
  }
  std::vector<std::size_t> out;
  if (tensor.rank() == 1) {
    for (int o = slice.out_begin; o < slice.out_end; ++o) out.push_back(static_cast<std::size_t>(o));
    return out;
  }
  const int cols = tensor.dim(1);
  if (slice.in_begin < 0 || slice.in_end > cols || slice.in_begin >= slice.in_end) {
    throw GraphError("slice columns out of range for node " + std::to_string(slice.node));
  }
  const std::size_t inner = tensor.size() / (static_cast<std::size_t>(rows) * cols);
  for (int o = slice.out_begin; o < slice.out_end; ++o) {
    for (int i = slice.in_begin; i < slice.in_end; ++i) {
      const std::size_t base = (static_cast<std::size_t>(o) * cols + i) * inner;
      for (std::size_t k = 0; k < inner; ++k) out.push_back(base + k);
    }
  }
  return out;
}

void WeightStore::synchronize() {
  for (const SharingGroup& g : groups) {
    if (g.pinned || g.members.size() < 2) continue;
    const SliceRef& lead = g.members[0];
    const Tensor& src = param(lead.node, lead.param);
    const auto src_idx = slice_indices(src, lead);
    std::vector<double> values;
    values.reserve(src_idx.size());
    for (std::size_t i : src_idx) values.push_back(src[i]);
    for (std::size_t m = 1; m < g.members.size(); ++m) {
      Tensor& dst = param(g.members[m].node, g.members[m].param);
      const auto idx = slice_indices(dst, g.members[m]);
      if (idx.size() != values.size()) throw GraphError("sharing group members differ in size");
      for (std::size_t k = 0; k < idx.size(); ++k) dst[idx[k]] = values[k];
    }
  }
}

double WeightStore::sharing_violation() const {
  double worst = 0.0;
  for (const SharingGroup& g : groups) {
    if (g.members.size() < 2) continue;
    const Tensor& src = param(g.members[0].node, g.members[0].param);
    const auto src_idx = slice_indices(src, g.members[0]);
    for (std::size_t m = 1; m < g.members.size(); ++m) {
      const Tensor& dst = param(g.members[m].node, g.members[m].param);
      const auto idx = slice_indices(dst, g.members[m]);
      if (idx.size() != src_idx.size()) return INFINITY;
      for (std::size_t k = 0; k < idx.size(); ++k) {
        worst = std::max(worst, std::abs(dst[idx[k]] - src[src_idx[k]]));
      }
    }
  }
  return worst;
}

ParamGrads zero_grads(const WeightStore& weights) {
  ParamGrads grads;
  for (const auto& [id, set] : weights.params) {
    for (const auto& [name, t] : set) grads[id].emplace(name, Tensor::zeros_like(t));
  }
  return grads;
}

WeightStore init_weights(const ArchGraph& graph, std::uint64_t seed) {
  const ValidationReport report = validate_or_throw(graph);
  WeightStore store;
  for (NodeId id : report.order) {
    const NodeKind& kind = graph.node(id);
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(id)));
    if (const auto* conv = std::get_if<op::Conv>(&kind)) {
      const int in = report.shape(graph.inputs(id)[0]).channels;
      Tensor w({conv->out_channels, in, conv->kernel, conv->kernel});
      const double bound = 1.0 / std::sqrt(static_cast<double>(in * conv->kernel * conv->kernel));
      for (double& x : w.data()) x = rng.uniform(-bound, bound);
      store.params[id].emplace(kWeight, std::move(w));
      store.params[id].emplace(kBias, Tensor({conv->out_channels}));
    } else if (holds<op::BatchNorm>(kind)) {
      const int c = report.shape(id).channels;
      store.params[id].emplace(kGamma, Tensor({c}, 1.0));
      store.params[id].emplace(kBeta, Tensor({c}));
      store.bn_stats[id] = {std::vector<double>(static_cast<std::size_t>(c), 0.0),
                            std::vector<double>(static_cast<std::size_t>(c), 1.0)};
    } else if (const auto* pred = std::get_if<op::Predict>(&kind)) {
      const int c = report.shape(graph.inputs(id)[0]).channels;
      Tensor w({pred->classes, c});
      const double bound = 1.0 / std::sqrt(static_cast<double>(c));
      for (double& x : w.data()) x = rng.uniform(-bound, bound);
      store.params[id].emplace(kWeight, std::move(w));
      store.params[id].emplace(kBias, Tensor({pred->classes}));
    }
  }
  return store;
}

void check_weights(const ArchGraph& graph, const WeightStore& weights) {
  const ValidationReport report = validate_or_throw(graph);
  auto expect = [&](NodeId id, std::string_view name, const std::vector<int>& shape) {
    const Tensor& t = weights.param(id, name);
    if (t.shape() != shape) {
      throw GraphError("node " + std::to_string(id) + " parameter '" + std::string(name) +
                       "' has shape " + shape_string(t.shape()) + ", graph expects " +
                       shape_string(shape));
    }
  };
  for (NodeId id : report.order) {
    const NodeKind& kind = graph.node(id);
    if (const auto* conv = std::get_if<op::Conv>(&kind)) {
      const int in = report.shape(graph.inputs(id)[0]).channels;
      expect(id, kWeight, {conv->out_channels, in, conv->kernel, conv->kernel});
      expect(id, kBias, {conv->out_channels});
    } else if (holds<op::BatchNorm>(kind)) {
      const int c = report.shape(id).channels;
      expect(id, kGamma, {c});
      expect(id, kBeta, {c});
    } else if (const auto* pred = std::get_if<op::Predict>(&kind)) {
      const int c = report.shape(graph.inputs(id)[0]).channels;
      expect(id, kWeight, {pred->classes, c});
      expect(id, kBias, {pred->classes});
    }
  }
}

// ---------------------------------------------------------------------------
// JSON form: {"schema_version", "params": {id: {name: {shape, data}}},
// "bn_stats": {id: {mean, var}}, "groups": [...]}

namespace {

using nlohmann::json;

json tensor_to_json(const Tensor& t) {
  return json{{"shape", t.shape()},
              {"data", std::vector<double>(t.data().begin(), t.data().end())}};
}

Tensor tensor_from_json(const json& j) {
  return Tensor(j.at("shape").get<std::vector<int>>(), j.at("data").get<std::vector<double>>());
}

}  // namespace

std::string serialize_weights(const WeightStore& weights) {
  json j;
  j["schema_version"] = 1;
  json params = json::object();
  for (const auto& [id, set] : weights.params) {
    json entry = json::object();
    for (const auto& [name, t] : set) entry[name] = tensor_to_json(t);
    params[std::to_string(id)] = std::move(entry);
  }
  j["params"] = std::move(params);
  json stats = json::object();
  for (const auto& [id, s] : weights.bn_stats) {
    stats[std::to_string(id)] = {{"mean", s.mean}, {"var", s.var}};
  }
  j["bn_stats"] = std::move(stats);
  json groups = json::array();
  for (const SharingGroup& g : weights.groups) {
    json members = json::array();
    for (const SliceRef& m : g.members) {
      members.push_back({{"node", m.node},
                         {"param", m.param},
                         {"out", {m.out_begin, m.out_end}},
                         {"in", {m.in_begin, m.in_end}}});
    }
    groups.push_back({{"members", std::move(members)}, {"pinned", g.pinned}, {"label", g.label}});
  }
  j["groups"] = std::move(groups);
  return j.dump() + "\n";
}

WeightStore deserialize_weights(std::string_view text) {
  WeightStore store;
  try {
    const json j = json::parse(text.begin(), text.end());
    if (j.at("schema_version").get<int>() != 1) throw GraphError("weights schema version mismatch");
    for (const auto& [id, entry] : j.at("params").items()) {
      for (const auto& [name, t] : entry.items()) {
        store.params[std::stoi(id)].emplace(name, tensor_from_json(t));
      }
    }
    for (const auto& [id, s] : j.at("bn_stats").items()) {
      store.bn_stats[std::stoi(id)] = {s.at("mean").get<std::vector<double>>(),
                                       s.at("var").get<std::vector<double>>()};
    }
    for (const json& g : j.at("groups")) {
      SharingGroup group;
      group.pinned = g.at("pinned").get<bool>();
      group.label = g.at("label").get<std::string>();
      for (const json& m : g.at("members")) {
        SliceRef ref;
        ref.node = m.at("node").get<int>();
        ref.param = m.at("param").get<std::string>();
        ref.out_begin = m.at("out").at(0).get<int>();
        ref.out_end = m.at("out").at(1).get<int>();
        ref.in_begin = m.at("in").at(0).get<int>();
        ref.in_end = m.at("in").at(1).get<int>();
        group.members.push_back(std::move(ref));
      }
      store.groups.push_back(std::move(group));
    }
  } catch (const json::exception& err) {
    throw GraphError(std::string("malformed weights JSON: ") + err.what());
  } catch (const std::invalid_argument& err) {
    throw GraphError(std::string("malformed weights JSON: ") + err.what());
  }
  return store;
}

}  // namespace fractal
