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

#include "fractal/nn_core.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "fractal/random.hpp"

namespace fractal {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

void hash_mix(std::uint64_t& h, std::uint64_t value) {
  for (int i = 0; i < 8; ++i) {
    h ^= (value >> (8 * i)) & 0xff;
    h *= kFnvPrime;
  }
}

struct ConvGeometry {
  int in_channels, height, width;
  int kernel, stride, pad;
  int out_height, out_width;

  int patch() const { return in_channels * kernel * kernel; }
  int pixels() const { return out_height * out_width; }
  bool direct() const { return kernel == 1 && stride == 1 && pad == 0; }
};

ConvGeometry geometry(const Tensor& x, const op::Conv& conv) {
  ConvGeometry g{x.dim(1), x.dim(2), x.dim(3), conv.kernel, conv.stride, conv.pad, 0, 0};
  g.out_height = window_output(g.height, g.kernel, g.stride, g.pad);
  g.out_width = window_output(g.width, g.kernel, g.stride, g.pad);
  return g;
}

// cols is row-major [C*k*k][Ho*Wo].
void im2col(const double* image, const ConvGeometry& g, double* cols) {
  const int pixels = g.pixels();
  for (int c = 0; c < g.in_channels; ++c) {
    for (int ki = 0; ki < g.kernel; ++ki) {
      for (int kj = 0; kj < g.kernel; ++kj) {
        double* row = cols + static_cast<std::size_t>((c * g.kernel + ki) * g.kernel + kj) * pixels;
        for (int oh = 0; oh < g.out_height; ++oh) {
          const int ih = oh * g.stride - g.pad + ki;
          double* dst = row + oh * g.out_width;
          if (ih < 0 || ih >= g.height) {
            std::fill(dst, dst + g.out_width, 0.0);
            continue;
          }
          const double* src = image + (static_cast<std::size_t>(c) * g.height + ih) * g.width;
          for (int ow = 0; ow < g.out_width; ++ow) {
            const int iw = ow * g.stride - g.pad + kj;
            dst[ow] = (iw >= 0 && iw < g.width) ? src[iw] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* cols, const ConvGeometry& g, double* image) {
  const int pixels = g.pixels();
  for (int c = 0; c < g.in_channels; ++c) {
    for (int ki = 0; ki < g.kernel; ++ki) {
      for (int kj = 0; kj < g.kernel; ++kj) {
        const double* row =
            cols + static_cast<std::size_t>((c * g.kernel + ki) * g.kernel + kj) * pixels;
        for (int oh = 0; oh < g.out_height; ++oh) {
          const int ih = oh * g.stride - g.pad + ki;
          if (ih < 0 || ih >= g.height) continue;
          double* dst = image + (static_cast<std::size_t>(c) * g.height + ih) * g.width;
          const double* src = row + oh * g.out_width;
          for (int ow = 0; ow < g.out_width; ++ow) {
            const int iw = ow * g.stride - g.pad + kj;
            if (iw >= 0 && iw < g.width) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

Tensor conv_forward(const Tensor& x, const Tensor& w, const Tensor& b, const op::Conv& conv) {
  const ConvGeometry g = geometry(x, conv);
  const int batch = x.dim(0);
  const int out_c = conv.out_channels;
  Tensor y({batch, out_c, g.out_height, g.out_width});
  ConstMatMap wm(w.raw(), out_c, g.patch());
  std::vector<double> cols(g.direct() ? 0 : static_cast<std::size_t>(g.patch()) * g.pixels());
  const std::size_t in_stride = static_cast<std::size_t>(g.in_channels) * g.height * g.width;
  const std::size_t out_stride = static_cast<std::size_t>(out_c) * g.pixels();
  for (int n = 0; n < batch; ++n) {
    const double* image = x.raw() + n * in_stride;
    const double* colp = image;
    if (!g.direct()) {
      im2col(image, g, cols.data());
      colp = cols.data();
    }
    ConstMatMap cm(colp, g.patch(), g.pixels());
    MatMap ym(y.raw() + n * out_stride, out_c, g.pixels());
    ym.noalias() = wm * cm;
    for (int o = 0; o < out_c; ++o) ym.row(o).array() += b[static_cast<std::size_t>(o)];
  }
  return y;
}

void conv_backward(const Tensor& x, const Tensor& w, const Tensor& dy, const op::Conv& conv,
                   Tensor* dx, Tensor* dw, Tensor* db) {
  const ConvGeometry g = geometry(x, conv);
  const int batch = x.dim(0);
  const int out_c = conv.out_channels;
  ConstMatMap wm(w.raw(), out_c, g.patch());
  std::vector<double> cols(static_cast<std::size_t>(g.patch()) * g.pixels());
  std::vector<double> dcols(cols.size());
  const std::size_t in_stride = static_cast<std::size_t>(g.in_channels) * g.height * g.width;
  const std::size_t out_stride = static_cast<std::size_t>(out_c) * g.pixels();
  RowMat dw_acc;
  if (dw != nullptr) dw_acc = RowMat::Zero(out_c, g.patch());
  for (int n = 0; n < batch; ++n) {
    const double* image = x.raw() + n * in_stride;
    ConstMatMap dym(dy.raw() + n * out_stride, out_c, g.pixels());
    if (dw != nullptr) {
      const double* colp = image;
      if (!g.direct()) {
        im2col(image, g, cols.data());
        colp = cols.data();
      }
      ConstMatMap cm(colp, g.patch(), g.pixels());
      dw_acc.noalias() += dym * cm.transpose();
    }
    if (db != nullptr) {
      for (int o = 0; o < out_c; ++o) (*db)[static_cast<std::size_t>(o)] += dym.row(o).sum();
    }
    if (dx != nullptr) {
      MatMap dcm(dcols.data(), g.patch(), g.pixels());
      dcm.noalias() = wm.transpose() * dym;
      if (g.direct()) {
        double* dst = dx->raw() + n * in_stride;
        for (std::size_t i = 0; i < in_stride; ++i) dst[i] += dcols[i];
      } else {
        col2im_add(dcols.data(), g, dx->raw() + n * in_stride);
      }
    }
  }
  if (dw != nullptr) {
    for (std::size_t i = 0; i < dw->size(); ++i) (*dw)[i] += dw_acc.data()[i];
  }
}

double int_power(double x, int p) {
  double r = 1.0;
  for (int i = 0; i < p; ++i) r *= x;
  return r;
}

struct Shape4 {
  int n, c, h, w;
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
};

Shape4 shape4(const Tensor& t) { return {t.dim(0), t.dim(1), t.dim(2), t.dim(3)}; }

std::vector<bool> alive_set(const ArchGraph& graph, NodeId id, const EvalContext& ctx,
                            std::size_t inbound) {
  std::vector<bool> alive(inbound, true);
  if (!ctx.masks_active()) return alive;
  auto it = ctx.alive.find(id);
  if (it == ctx.alive.end()) return alive;
  const auto& join = std::get<op::Join>(graph.node(id));
  if (join.kind != JoinKind::kMean && join.kind != JoinKind::kFreezeDropPath) {
    throw EvalError("drop-path mask on node " + std::to_string(id) + " (" +
                    std::string(join_kind_name(join.kind)) +
                    " join); only mean and freeze-drop-path joins can drop branches");
  }
  if (it->second.size() != inbound) {
    throw EvalError("drop-path mask on join " + std::to_string(id) + " has " +
                    std::to_string(it->second.size()) + " entries, join has " +
                    std::to_string(inbound) + " inputs");
  }
  return it->second;
}

}  // namespace

bool EvalContext::branch_alive(NodeId join, int ordinal) const {
  if (!masks_active()) return true;
  auto it = alive.find(join);
  if (it == alive.end()) return true;
  return ordinal < static_cast<int>(it->second.size()) && it->second[static_cast<std::size_t>(ordinal)];
}

std::uint64_t EvalContext::fingerprint() const {
  std::uint64_t h = kFnvOffset;
  hash_mix(h, static_cast<std::uint64_t>(mode));
  hash_mix(h, seed);
  for (const auto& [id, mask] : alive) {
    hash_mix(h, static_cast<std::uint64_t>(id));
    for (bool b : mask) hash_mix(h, b ? 1 : 0);
  }
  hash_mix(h, 0xfeedULL);
  for (NodeId id : frozen) hash_mix(h, static_cast<std::uint64_t>(id));
  return h;
}

const Tensor& ForwardPass::value(NodeId id) const {
  auto it = values.find(id);
  if (it == values.end()) throw EvalError("node " + std::to_string(id) + " has no value (not live)");
  return it->second;
}

ForwardPass forward(const ArchGraph& graph, const WeightStore& weights, const Tensor& input,
                    const EvalContext& ctx, ForwardOptions options) {
  const ValidationReport report = validate_or_throw(graph);
  const TensorShape in_shape = report.shape(graph.input_id());
  if (input.rank() != 4 || input.dim(1) != in_shape.channels || input.dim(2) != in_shape.height ||
      input.dim(3) != in_shape.width) {
    throw EvalError("input tensor " + shape_string(input.shape()) + " does not match graph input " +
                    in_shape.to_string());
  }

  ForwardPass pass;
  pass.order = report.order;
  pass.output_id = graph.output_id();
  pass.context_fingerprint = ctx.fingerprint();
  pass.retained = options.retain;

  // Live nodes: those with an alive route to the output.
  pass.live.insert(graph.output_id());
  for (auto it = report.order.rbegin(); it != report.order.rend(); ++it) {
    for (const Edge& e : graph.out_edges(*it)) {
      if (pass.live.count(e.dst) && ctx.branch_alive(e.dst, e.ordinal)) {
        pass.live.insert(*it);
        break;
      }
    }
  }
  if (!pass.live.count(graph.input_id())) throw EvalError("empty alive set: output unreachable");

  std::map<NodeId, int> pending;  // consumers yet to run, for release when !retain
  if (!options.retain) {
    for (const Edge& e : graph.edges()) {
      if (pass.live.count(e.dst)) ++pending[e.src];
    }
  }

  std::uint64_t signature = kFnvOffset;
  const bool train = ctx.mode == Mode::kTrain;

  for (NodeId id : report.order) {
    if (!pass.live.count(id)) continue;
    const NodeKind& kind = graph.node(id);
    const std::vector<Edge> in_edges = graph.in_edges(id);
    std::vector<const Tensor*> in;
    for (const Edge& e : in_edges) {
      auto it = pass.values.find(e.src);
      in.push_back(it == pass.values.end() ? nullptr : &it->second);
    }
    Tensor out;

    if (holds<op::Input>(kind)) {
      out = input;
    } else if (const auto* conv = std::get_if<op::Conv>(&kind)) {
      out = conv_forward(*in[0], weights.param(id, kWeight), weights.param(id, kBias), *conv);
    } else if (const auto* bn = std::get_if<op::BatchNorm>(&kind)) {
      const Tensor& x = *in[0];
      const Shape4 s = shape4(x);
      const Tensor& gamma = weights.param(id, kGamma);
      const Tensor& beta = weights.param(id, kBeta);
      BnCache cache;
      cache.normalized = Tensor(x.shape());
      cache.mean.assign(static_cast<std::size_t>(s.c), 0.0);
      cache.var.assign(static_cast<std::size_t>(s.c), 0.0);
      cache.inv_std.assign(static_cast<std::size_t>(s.c), 0.0);
      cache.batch_statistics = ctx.mode != Mode::kEval;
      const double count = static_cast<double>(s.n) * static_cast<double>(s.plane());
      if (cache.batch_statistics) {
        for (int c = 0; c < s.c; ++c) {
          double sum = 0.0;
          for (int n = 0; n < s.n; ++n) {
            const double* p = x.raw() + x.offset(n, c, 0, 0);
            for (std::size_t i = 0; i < s.plane(); ++i) sum += p[i];
          }
          const double mean = sum / count;
          double sq = 0.0;
          for (int n = 0; n < s.n; ++n) {
            const double* p = x.raw() + x.offset(n, c, 0, 0);
            for (std::size_t i = 0; i < s.plane(); ++i) sq += (p[i] - mean) * (p[i] - mean);
          }
          cache.mean[static_cast<std::size_t>(c)] = mean;
          cache.var[static_cast<std::size_t>(c)] = sq / count;
        }
      } else {
        auto it = weights.bn_stats.find(id);
        if (it == weights.bn_stats.end() || it->second.mean.size() != static_cast<std::size_t>(s.c)) {
          throw EvalError("batch-norm node " + std::to_string(id) + " has no statistics");
        }
        cache.mean = it->second.mean;
        cache.var = it->second.var;
      }
      out = Tensor(x.shape());
      for (int c = 0; c < s.c; ++c) {
        const auto cu = static_cast<std::size_t>(c);
        const double inv_std = 1.0 / std::sqrt(cache.var[cu] + bn->epsilon);
        cache.inv_std[cu] = inv_std;
        for (int n = 0; n < s.n; ++n) {
          const std::size_t base = x.offset(n, c, 0, 0);
          for (std::size_t i = 0; i < s.plane(); ++i) {
            const double xhat = (x[base + i] - cache.mean[cu]) * inv_std;
            cache.normalized[base + i] = xhat;
            out[base + i] = gamma[cu] * xhat + beta[cu];
          }
        }
      }
      if (options.retain || ctx.mode == Mode::kCalibrate) {
        if (!options.retain) cache.normalized = Tensor();
        pass.batch_norm.emplace(id, std::move(cache));
      }
    } else if (holds<op::Activation>(kind)) {
      const Tensor& x = *in[0];
      out = Tensor(x.shape());
      std::uint64_t word = 0;
      int bits = 0;
      for (std::size_t i = 0; i < x.size(); ++i) {
        const bool on = x[i] > 0.0;
        out[i] = on ? x[i] : 0.0;
        word = (word << 1) | (on ? 1u : 0u);
        if (++bits == 64) {
          hash_mix(signature, word);
          word = 0;
          bits = 0;
        }
      }
      hash_mix(signature, word);
    } else if (const auto* pool = std::get_if<op::Pool>(&kind)) {
      const Tensor& x = *in[0];
      const Shape4 s = shape4(x);
      const int oh = window_output(s.h, pool->window, pool->stride, 0);
      const int ow = window_output(s.w, pool->window, pool->stride, 0);
      out = Tensor({s.n, s.c, oh, ow});
      std::vector<std::uint32_t> arg;
      if (pool->kind == PoolKind::kMax) arg.resize(out.size());
      const double inv_area = 1.0 / (pool->window * pool->window);
      std::size_t o = 0;
      for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
          for (int i = 0; i < oh; ++i) {
            for (int j = 0; j < ow; ++j, ++o) {
              if (pool->kind == PoolKind::kMax) {
                std::size_t best = x.offset(n, c, i * pool->stride, j * pool->stride);
                for (int a = 0; a < pool->window; ++a) {
                  for (int b = 0; b < pool->window; ++b) {
                    const std::size_t k = x.offset(n, c, i * pool->stride + a, j * pool->stride + b);
                    if (x[k] > x[best]) best = k;
                  }
                }
                out[o] = x[best];
                arg[o] = static_cast<std::uint32_t>(best);
                hash_mix(signature, best);
              } else {
                double sum = 0.0;
                for (int a = 0; a < pool->window; ++a) {
                  for (int b = 0; b < pool->window; ++b) {
                    sum += x.at(n, c, i * pool->stride + a, j * pool->stride + b);
                  }
                }
                out[o] = sum * inv_area;
              }
            }
          }
        }
      }
      if (options.retain && pool->kind == PoolKind::kMax) pass.argmax.emplace(id, std::move(arg));
    } else if (const auto* drop = std::get_if<op::Dropout>(&kind)) {
      const Tensor& x = *in[0];
      out = x;
      if (train && drop->rate > 0.0) {
        Rng rng(mix_seed(ctx.seed, 0x100000000ULL + static_cast<std::uint64_t>(id)));
        const double keep_scale = 1.0 / (1.0 - drop->rate);
        std::vector<double> scale(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) {
          scale[i] = rng.uniform() < drop->rate ? 0.0 : keep_scale;
          out[i] *= scale[i];
        }
        if (options.retain) pass.dropout_scale.emplace(id, std::move(scale));
      }
    } else if (const auto* pw = std::get_if<op::ElementwisePower>(&kind)) {
      const Tensor& x = *in[0];
      out = Tensor(x.shape());
      for (std::size_t i = 0; i < x.size(); ++i) out[i] = int_power(x[i], pw->exponent);
    } else if (const auto* join = std::get_if<op::Join>(&kind)) {
      const std::vector<bool> alive = alive_set(graph, id, ctx, in.size());
      std::vector<std::size_t> members;
      for (std::size_t i = 0; i < in.size(); ++i) {
        if (alive[i]) members.push_back(i);
      }
      if (members.empty()) {
        throw EvalError("empty alive set at join " + std::to_string(id));
      }
      const Tensor& first = *in[members[0]];
      switch (join->kind) {
        case JoinKind::kSum:
        case JoinKind::kMean:
        case JoinKind::kFreezeDropPath: {
          out = Tensor(first.shape());
          for (std::size_t m : members) out.add(*in[m]);
          if (join->kind != JoinKind::kSum) {
            // Divide rather than scale by 1/k so Mean is bitwise Sum/k.
            const double k = static_cast<double>(members.size());
            for (double& v : out.data()) v /= k;
          }
          break;
        }
        case JoinKind::kMaxout: {
          out = first;
          std::vector<std::uint32_t> arg(out.size(), 0);
          for (std::size_t m = 1; m < in.size(); ++m) {
            const Tensor& t = *in[m];
            for (std::size_t i = 0; i < out.size(); ++i) {
              if (t[i] > out[i]) {  // strict: ties keep the lowest ordinal
                out[i] = t[i];
                arg[i] = static_cast<std::uint32_t>(m);
              }
            }
          }
          for (std::uint32_t a : arg) hash_mix(signature, a);
          if (options.retain) pass.argmax.emplace(id, std::move(arg));
          break;
        }
        case JoinKind::kConcat: {
          const Shape4 s0 = shape4(first);
          int channels = 0;
          for (const Tensor* t : in) channels += t->dim(1);
          out = Tensor({s0.n, channels, s0.h, s0.w});
          for (int n = 0; n < s0.n; ++n) {
            std::size_t dst = out.offset(n, 0, 0, 0);
            for (const Tensor* t : in) {
              const std::size_t len = static_cast<std::size_t>(t->dim(1)) * s0.plane();
              std::copy_n(t->raw() + t->offset(n, 0, 0, 0), len, out.raw() + dst);
              dst += len;
            }
          }
          break;
        }
      }
    } else if (std::holds_alternative<op::Predict>(kind)) {
      const Tensor& x = *in[0];
      const Shape4 s = shape4(x);
      const Tensor& w = weights.param(id, kWeight);
      const Tensor& b = weights.param(id, kBias);
      const int classes = w.dim(0);
      RowMat pooled(s.n, s.c);
      for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
          const double* p = x.raw() + x.offset(n, c, 0, 0);
          double sum = 0.0;
          for (std::size_t i = 0; i < s.plane(); ++i) sum += p[i];
          pooled(n, c) = sum / static_cast<double>(s.plane());
        }
      }
      out = Tensor({s.n, classes});
      MatMap om(out.raw(), s.n, classes);
      om.noalias() = pooled * ConstMatMap(w.raw(), classes, s.c).transpose();
      for (int n = 0; n < s.n; ++n) {
        for (int k = 0; k < classes; ++k) om(n, k) += b[static_cast<std::size_t>(k)];
      }
    }

    pass.values.emplace(id, std::move(out));
    if (!options.retain) {
      for (const Edge& e : in_edges) {
        if (--pending[e.src] == 0 && e.src != graph.output_id()) pass.values.erase(e.src);
      }
    }
  }
  pass.switch_signature = signature;
  return pass;
}

BackwardResult backward(const ArchGraph& graph, const WeightStore& weights,
                        const ForwardPass& pass, const EvalContext& ctx, const Tensor& loss_grad) {
  if (!pass.retained) throw EvalError("backward needs a forward pass run with retain=true");
  if (pass.context_fingerprint != ctx.fingerprint()) {
    throw EvalError("evaluation context differs from the one used for the forward pass");
  }
  if (!loss_grad.same_shape(pass.output())) {
    throw EvalError("loss gradient shape " + shape_string(loss_grad.shape()) +
                    " does not match output " + shape_string(pass.output().shape()));
  }

  BackwardResult result;
  result.params = zero_grads(weights);
  auto& grads = result.output_grads;
  grads.emplace(graph.output_id(), loss_grad);

  auto accumulate = [&](NodeId id, Tensor g) {
    auto it = grads.find(id);
    if (it == grads.end()) {
      grads.emplace(id, std::move(g));
    } else {
      it->second.add(g);
    }
  };

  for (auto it = pass.order.rbegin(); it != pass.order.rend(); ++it) {
    const NodeId id = *it;
    if (!pass.live.count(id)) continue;
    auto git = grads.find(id);
    if (git == grads.end()) continue;
    const Tensor& dy = git->second;
    const NodeKind& kind = graph.node(id);
    const std::vector<NodeId> srcs = graph.inputs(id);
    const bool frozen = ctx.is_frozen(id);

    if (holds<op::Input>(kind)) continue;

    if (const auto* conv = std::get_if<op::Conv>(&kind)) {
      const Tensor& x = pass.value(srcs[0]);
      Tensor dx = Tensor::zeros_like(x);
      ParamSet& pg = result.params.at(id);
      conv_backward(x, weights.param(id, kWeight), dy, *conv, &dx,
                    frozen ? nullptr : &pg.find(kWeight)->second,
                    frozen ? nullptr : &pg.find(kBias)->second);
      accumulate(srcs[0], std::move(dx));
    } else if (holds<op::BatchNorm>(kind)) {
      const BnCache& cache = pass.batch_norm.at(id);
      const Tensor& x = pass.value(srcs[0]);
      const Shape4 s = shape4(x);
      const Tensor& gamma = weights.param(id, kGamma);
      Tensor dx(x.shape());
      ParamSet& pg = result.params.at(id);
      Tensor& dgamma = pg.find(kGamma)->second;
      Tensor& dbeta = pg.find(kBeta)->second;
      const double count = static_cast<double>(s.n) * static_cast<double>(s.plane());
      for (int c = 0; c < s.c; ++c) {
        const auto cu = static_cast<std::size_t>(c);
        double sum_dy = 0.0;
        double sum_dy_xhat = 0.0;
        for (int n = 0; n < s.n; ++n) {
          const std::size_t base = x.offset(n, c, 0, 0);
          for (std::size_t i = 0; i < s.plane(); ++i) {
            sum_dy += dy[base + i];
            sum_dy_xhat += dy[base + i] * cache.normalized[base + i];
          }
        }
        if (!frozen) {
          dgamma[cu] += sum_dy_xhat;
          dbeta[cu] += sum_dy;
        }
        const double g = gamma[cu];
        const double inv_std = cache.inv_std[cu];
        for (int n = 0; n < s.n; ++n) {
          const std::size_t base = x.offset(n, c, 0, 0);
          for (std::size_t i = 0; i < s.plane(); ++i) {
            if (cache.batch_statistics) {
              dx[base + i] = g * inv_std / count *
                             (count * dy[base + i] - sum_dy - cache.normalized[base + i] * sum_dy_xhat);
            } else {
              dx[base + i] = g * inv_std * dy[base + i];
            }
          }
        }
      }
      accumulate(srcs[0], std::move(dx));
    } else if (holds<op::Activation>(kind)) {
      const Tensor& x = pass.value(srcs[0]);
      Tensor dx(x.shape());
      for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > 0.0 ? dy[i] : 0.0;
      accumulate(srcs[0], std::move(dx));
    } else if (const auto* pool = std::get_if<op::Pool>(&kind)) {
      const Tensor& x = pass.value(srcs[0]);
      Tensor dx(x.shape());
      if (pool->kind == PoolKind::kMax) {
        const auto& arg = pass.argmax.at(id);
        for (std::size_t o = 0; o < dy.size(); ++o) dx[arg[o]] += dy[o];
      } else {
        const Shape4 s = shape4(dy);
        const double inv_area = 1.0 / (pool->window * pool->window);
        std::size_t o = 0;
        for (int n = 0; n < s.n; ++n) {
          for (int c = 0; c < s.c; ++c) {
            for (int i = 0; i < s.h; ++i) {
              for (int j = 0; j < s.w; ++j, ++o) {
                for (int a = 0; a < pool->window; ++a) {
                  for (int b = 0; b < pool->window; ++b) {
                    dx.at(n, c, i * pool->stride + a, j * pool->stride + b) += dy[o] * inv_area;
                  }
                }
              }
            }
          }
        }
      }
      accumulate(srcs[0], std::move(dx));
    } else if (holds<op::Dropout>(kind)) {
      Tensor dx = dy;
      auto mit = pass.dropout_scale.find(id);
      if (mit != pass.dropout_scale.end()) {
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= mit->second[i];
      }
      accumulate(srcs[0], std::move(dx));
    } else if (const auto* pw = std::get_if<op::ElementwisePower>(&kind)) {
      const Tensor& x = pass.value(srcs[0]);
      Tensor dx(x.shape());
      for (std::size_t i = 0; i < x.size(); ++i) {
        dx[i] = dy[i] * pw->exponent * int_power(x[i], pw->exponent - 1);
      }
      accumulate(srcs[0], std::move(dx));
    } else if (const auto* join = std::get_if<op::Join>(&kind)) {
      const std::vector<bool> alive = alive_set(graph, id, ctx, srcs.size());
      std::size_t n_alive = 0;
      for (bool a : alive) n_alive += a ? 1 : 0;
      switch (join->kind) {
        case JoinKind::kSum:
          for (NodeId src : srcs) accumulate(src, dy);
          break;
        case JoinKind::kMean:
        case JoinKind::kFreezeDropPath: {
          Tensor share = dy;
          share.scale(1.0 / static_cast<double>(n_alive));
          for (std::size_t i = 0; i < srcs.size(); ++i) {
            if (alive[i]) accumulate(srcs[i], share);
          }
          break;
        }
        case JoinKind::kMaxout: {
          const auto& arg = pass.argmax.at(id);
          for (std::size_t m = 0; m < srcs.size(); ++m) {
            Tensor dx = Tensor::zeros_like(dy);
            for (std::size_t i = 0; i < dy.size(); ++i) {
              if (arg[i] == m) dx[i] = dy[i];
            }
            accumulate(srcs[m], std::move(dx));
          }
          break;
        }
        case JoinKind::kConcat: {
          const Shape4 s = shape4(dy);
          int channel = 0;
          for (NodeId src : srcs) {
            const Tensor& x = pass.value(src);
            Tensor dx(x.shape());
            const std::size_t len = static_cast<std::size_t>(x.dim(1)) * s.plane();
            for (int n = 0; n < s.n; ++n) {
              std::copy_n(dy.raw() + dy.offset(n, channel, 0, 0), len, dx.raw() + dx.offset(n, 0, 0, 0));
            }
            channel += x.dim(1);
            accumulate(src, std::move(dx));
          }
          break;
        }
      }
    } else if (std::holds_alternative<op::Predict>(kind)) {
      const Tensor& x = pass.value(srcs[0]);
      const Shape4 s = shape4(x);
      const Tensor& w = weights.param(id, kWeight);
      const int classes = w.dim(0);
      RowMat pooled(s.n, s.c);
      for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
          const double* p = x.raw() + x.offset(n, c, 0, 0);
          double sum = 0.0;
          for (std::size_t i = 0; i < s.plane(); ++i) sum += p[i];
          pooled(n, c) = sum / static_cast<double>(s.plane());
        }
      }
      ConstMatMap dym(dy.raw(), s.n, classes);
      if (!frozen) {
        ParamSet& pg = result.params.at(id);
        MatMap dwm(pg.find(kWeight)->second.raw(), classes, s.c);
        dwm.noalias() += dym.transpose() * pooled;
        Tensor& db = pg.find(kBias)->second;
        for (int k = 0; k < classes; ++k) db[static_cast<std::size_t>(k)] += dym.col(k).sum();
      }
      const RowMat dpooled = dym * ConstMatMap(w.raw(), classes, s.c);
      Tensor dx(x.shape());
      const double inv_plane = 1.0 / static_cast<double>(s.plane());
      for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
          double* p = dx.raw() + dx.offset(n, c, 0, 0);
          for (std::size_t i = 0; i < s.plane(); ++i) p[i] = dpooled(n, c) * inv_plane;
        }
      }
      accumulate(srcs[0], std::move(dx));
    }
  }

  auto in_it = grads.find(graph.input_id());
  if (in_it != grads.end()) result.input_grad = in_it->second;
  return result;
}

LossResult loss_softmax_xent(const Tensor& scores, std::span<const int> labels) {
  if (scores.rank() != 2) throw EvalError("scores must be (batch, classes)");
  const int batch = scores.dim(0);
  const int classes = scores.dim(1);
  if (static_cast<int>(labels.size()) != batch) throw EvalError("label count != batch size");
  LossResult result;
  result.grad = Tensor(scores.shape());
  double total = 0.0;
  for (int n = 0; n < batch; ++n) {
    const int label = labels[static_cast<std::size_t>(n)];
    if (label < 0 || label >= classes) {
      throw EvalError("label " + std::to_string(label) + " out of range for " +
                      std::to_string(classes) + " classes");
    }
    const double* row = scores.raw() + static_cast<std::size_t>(n) * classes;
    const double peak = *std::max_element(row, row + classes);
    double z = 0.0;
    for (int k = 0; k < classes; ++k) z += std::exp(row[k] - peak);
    const double log_z = std::log(z) + peak;
    total += log_z - row[label];
    double* g = result.grad.raw() + static_cast<std::size_t>(n) * classes;
    for (int k = 0; k < classes; ++k) {
      g[k] = (std::exp(row[k] - log_z) - (k == label ? 1.0 : 0.0)) / batch;
    }
  }
  result.loss = total / batch;
  return result;
}

std::vector<int> argmax_rows(const Tensor& scores) {
  const int batch = scores.dim(0);
  const int classes = scores.dim(1);
  std::vector<int> out(static_cast<std::size_t>(batch));
  for (int n = 0; n < batch; ++n) {
    const double* row = scores.raw() + static_cast<std::size_t>(n) * classes;
    out[static_cast<std::size_t>(n)] = static_cast<int>(std::max_element(row, row + classes) - row);
  }
  return out;
}

void refresh_bn_statistics(const ArchGraph& graph, WeightStore& weights, const Tensor& data) {
  EvalContext ctx;
  ctx.mode = Mode::kCalibrate;
  const ForwardPass pass = forward(graph, weights, data, ctx, {.retain = false});
  for (const auto& [id, cache] : pass.batch_norm) {
    weights.bn_stats[id] = {cache.mean, cache.var};
  }
}

}  // namespace fractal
