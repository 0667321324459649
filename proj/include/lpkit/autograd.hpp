// Copyright 2026 The lpkit Authors. All Rights Reserved.
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

// A small reverse-mode tape. Nodes are appended in forward order and
// backward walks them in reverse, so gradient accumulation order is fixed by
// the tape alone.

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "lpkit/errors.hpp"
#include "lpkit/fake_quant.hpp"
#include "lpkit/float8_train.hpp"
#include "lpkit/tensor.hpp"

namespace lpkit {

enum class OpKind { kLeaf, kMatmul, kAddBias, kRelu, kFakeQuantize, kFp8Linear, kMseLoss, kEmbedding };

struct Var {
  std::size_t id = 0;
};

class Tape {
 public:
  Var leaf(DenseTensor value, bool requires_grad = true) {
    Node n;
    n.kind = OpKind::kLeaf;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    return push(std::move(n));
  }

  /// a[M,K] . b[K,N], or a[M,K] . b[N,K]^T when `transpose_b`.
  Var matmul(Var a, Var b, bool transpose_b = false) {
    Node n;
    n.kind = OpKind::kMatmul;
    n.inputs = {a.id, b.id};
    n.transpose_b = transpose_b;
    n.value = transpose_b ? gemm_ref(value(a), transpose(value(b))) : gemm_ref(value(a), value(b));
    return push(std::move(n));
  }

  Var add_bias(Var x, Var bias) {
    Node n;
    n.kind = OpKind::kAddBias;
    n.inputs = {x.id, bias.id};
    n.value = lpkit::add_bias(value(x), value(bias));
    return push(std::move(n));
  }

  Var relu(Var x) {
    Node n;
    n.kind = OpKind::kRelu;
    n.inputs = {x.id};
    n.value = value(x);
    for (float& v : n.value.data()) v = v > 0.0F ? v : 0.0F;
    return push(std::move(n));
  }

  Var fake_quantize(Var x, const FakeQuantizeConfig& cfg) {
    FakeQuantResult fq = lpkit::fake_quantize(value(x), cfg);
    Node n;
    n.kind = OpKind::kFakeQuantize;
    n.inputs = {x.id};
    n.value = std::move(fq.value);
    n.mask = std::move(fq.ste_mask);
    return push(std::move(n));
  }

  /// x[M,K] . w[N,K]^T through the FP8 recipe in both directions.
  Var fp8_linear(Var x, Var w, const Fp8RecipeConfig& cfg) {
    Node n;
    n.kind = OpKind::kFp8Linear;
    n.inputs = {x.id, w.id};
    n.fp8 = cfg;
    n.value = fp8_linear_forward(value(x), value(w), cfg);
    return push(std::move(n));
  }

  /// mean((pred - target)^2) as a [1] tensor; the sum runs in double.
  Var mse_loss(Var pred, const DenseTensor& target) {
    const DenseTensor& p = value(pred);
    if (p.shape() != target.shape()) {
      throw ShapeError("mse_loss shapes differ: " + shape_str(p.shape()) + " vs " + shape_str(target.shape()));
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const double d = static_cast<double>(p[i]) - static_cast<double>(target[i]);
      acc += d * d;
    }
    Node n;
    n.kind = OpKind::kMseLoss;
    n.inputs = {pred.id};
    n.target = target;
    n.value = DenseTensor({1}, {static_cast<float>(acc / static_cast<double>(p.numel()))});
    return push(std::move(n));
  }

  /// Rows of table[V,D] selected by integer ids.
  Var embedding(Var table, std::vector<std::size_t> ids) {
    const DenseTensor& t = value(table);
    require_matrix(t, "embedding table");
    Node n;
    n.kind = OpKind::kEmbedding;
    n.inputs = {table.id};
    n.value = DenseTensor({ids.size(), t.dim(1)});
    for (std::size_t m = 0; m < ids.size(); ++m) {
      if (ids[m] >= t.dim(0)) throw BoundsError("embedding id " + std::to_string(ids[m]) + " out of range");
      for (std::size_t d = 0; d < t.dim(1); ++d) n.value.at(m, d) = t.at(ids[m], d);
    }
    n.ids = std::move(ids);
    return push(std::move(n));
  }

  [[nodiscard]] const DenseTensor& value(Var v) const { return nodes_.at(v.id).value; }
  [[nodiscard]] std::size_t size() const { return nodes_.size(); }

  /// Propagates `seed` (shape of `out`) back through the tape. Returns one
  /// optional gradient per node; leaves with requires_grad=false get none.
  std::vector<std::optional<DenseTensor>> backward(Var out, const DenseTensor& seed) const {
    if (seed.shape() != value(out).shape()) {
      throw ShapeError("seed gradient " + shape_str(seed.shape()) + " does not match output " +
                       shape_str(value(out).shape()));
    }
    std::vector<std::optional<DenseTensor>> grads(nodes_.size());
    grads[out.id] = seed;
    for (std::size_t i = out.id + 1; i-- > 0;) {
      if (!grads[i]) continue;
      const Node& n = nodes_[i];
      const DenseTensor& g = *grads[i];
      switch (n.kind) {
        case OpKind::kLeaf:
          break;
        case OpKind::kMatmul: {
          const DenseTensor& a = nodes_[n.inputs[0]].value;
          const DenseTensor& b = nodes_[n.inputs[1]].value;
          if (n.transpose_b) {
            accumulate(grads, n.inputs[0], gemm_ref(g, b));
            accumulate(grads, n.inputs[1], gemm_ref(transpose(g), a));
          } else {
            accumulate(grads, n.inputs[0], gemm_ref(g, transpose(b)));
            accumulate(grads, n.inputs[1], gemm_ref(transpose(a), g));
          }
          break;
        }
        case OpKind::kAddBias: {
          accumulate(grads, n.inputs[0], g);
          DenseTensor gb({g.dim(1)});
          for (std::size_t c = 0; c < g.dim(1); ++c) {
            double s = 0.0;
            for (std::size_t r = 0; r < g.dim(0); ++r) s += g.at(r, c);
            gb[c] = static_cast<float>(s);
          }
          accumulate(grads, n.inputs[1], gb);
          break;
        }
        case OpKind::kRelu: {
          const DenseTensor& x = nodes_[n.inputs[0]].value;
          DenseTensor gx = g;
          for (std::size_t k = 0; k < gx.numel(); ++k) {
            if (!(x[k] > 0.0F)) gx[k] = 0.0F;
          }
          accumulate(grads, n.inputs[0], gx);
          break;
        }
        case OpKind::kFakeQuantize: {
          DenseTensor gx = g;
          for (std::size_t k = 0; k < gx.numel(); ++k) {
            if (n.mask[k] == 0) gx[k] = 0.0F;
          }
          accumulate(grads, n.inputs[0], gx);
          break;
        }
        case OpKind::kFp8Linear: {
          LinearGrads lg = fp8_linear_backward(nodes_[n.inputs[0]].value, nodes_[n.inputs[1]].value, g, n.fp8);
          accumulate(grads, n.inputs[0], lg.grad_input);
          accumulate(grads, n.inputs[1], lg.grad_weight);
          break;
        }
        case OpKind::kMseLoss: {
          const DenseTensor& p = nodes_[n.inputs[0]].value;
          DenseTensor gp(p.shape());
          const double scale = 2.0 * static_cast<double>(g[0]) / static_cast<double>(p.numel());
          for (std::size_t k = 0; k < p.numel(); ++k) {
            gp[k] = static_cast<float>(scale * (static_cast<double>(p[k]) - static_cast<double>(n.target[k])));
          }
          accumulate(grads, n.inputs[0], gp);
          break;
        }
        case OpKind::kEmbedding: {
          const DenseTensor& t = nodes_[n.inputs[0]].value;
          DenseTensor gt(t.shape());
          for (std::size_t m = 0; m < n.ids.size(); ++m) {
            for (std::size_t d = 0; d < t.dim(1); ++d) gt.at(n.ids[m], d) += g.at(m, d);
          }
          accumulate(grads, n.inputs[0], gt);
          break;
        }
      }
    }
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (nodes_[i].kind == OpKind::kLeaf && !nodes_[i].requires_grad) grads[i].reset();
    }
    return grads;
  }

 private:
  struct Node {
    OpKind kind = OpKind::kLeaf;
    std::vector<std::size_t> inputs;
    DenseTensor value;
    bool requires_grad = true;
    bool transpose_b = false;
    std::vector<std::uint8_t> mask;
    Fp8RecipeConfig fp8;
    DenseTensor target;
    std::vector<std::size_t> ids;
  };

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  static void accumulate(std::vector<std::optional<DenseTensor>>& grads, std::size_t id, const DenseTensor& g) {
    if (!grads[id]) {
      grads[id] = g;
      return;
    }
    DenseTensor& dst = *grads[id];
    for (std::size_t k = 0; k < dst.numel(); ++k) dst[k] += g[k];
  }

  std::vector<Node> nodes_;
};

/// p <- p - lr * g, elementwise in float.
inline void sgd_step(DenseTensor& param, const DenseTensor& grad, float lr) {
  if (param.shape() != grad.shape()) {
    throw ShapeError("sgd: gradient " + shape_str(grad.shape()) + " does not match parameter " +
                     shape_str(param.shape()));
  }
  for (std::size_t i = 0; i < param.numel(); ++i) param[i] -= lr * grad[i];
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checks

struct GradCheckResult {
  bool skipped = false;
  std::string reason;
  double max_rel_deviation = 0.0;
};

/// Central-difference gradient of f(inputs) = sum(seed * build(inputs)) for
/// every input element. Step denominators use the float-rounded perturbation
/// actually applied.
inline std::vector<DenseTensor> finite_difference(
    const std::function<Var(Tape&, const std::vector<Var>&)>& build, const std::vector<DenseTensor>& point,
    const DenseTensor& seed, double eps) {
  auto evaluate = [&](const std::vector<DenseTensor>& pts) {
    Tape t;
    std::vector<Var> vars;
    for (const auto& p : pts) vars.push_back(t.leaf(p));
    const DenseTensor& out = t.value(build(t, vars));
    double s = 0.0;
    for (std::size_t i = 0; i < out.numel(); ++i) s += static_cast<double>(seed[i]) * out[i];
    return s;
  };
  std::vector<DenseTensor> fd;
  std::vector<DenseTensor> probe = point;
  for (std::size_t a = 0; a < point.size(); ++a) {
    DenseTensor g(point[a].shape());
    for (std::size_t i = 0; i < point[a].numel(); ++i) {
      const float x0 = point[a][i];
      const float hi = x0 + static_cast<float>(eps);
      const float lo = x0 - static_cast<float>(eps);
      probe[a][i] = hi;
      const double f_hi = evaluate(probe);
      probe[a][i] = lo;
      const double f_lo = evaluate(probe);
      probe[a][i] = x0;
      g[i] = static_cast<float>((f_hi - f_lo) / (static_cast<double>(hi) - static_cast<double>(lo)));
    }
    fd.push_back(std::move(g));
  }
  return fd;
}

/// max |fd - analytic| relative to the largest analytic magnitude.
inline double relative_deviation(const DenseTensor& analytic, const DenseTensor& fd) {
  double dev = 0.0;
  double mag = 0.0;
  for (std::size_t i = 0; i < analytic.numel(); ++i) {
    dev = std::max(dev, std::fabs(static_cast<double>(fd[i]) - static_cast<double>(analytic[i])));
    mag = std::max(mag, std::fabs(static_cast<double>(analytic[i])));
  }
  return dev / std::max(mag, 1e-30);
}

inline GradCheckResult grad_check_fn(const std::function<Var(Tape&, const std::vector<Var>&)>& build,
                                     const std::vector<DenseTensor>& point, const DenseTensor& seed,
                                     double eps) {
  Tape tape;
  std::vector<Var> vars;
  for (const auto& p : point) vars.push_back(tape.leaf(p));
  const auto grads = tape.backward(build(tape, vars), seed);
  const auto fd = finite_difference(build, point, seed, eps);
  GradCheckResult r;
  for (std::size_t a = 0; a < point.size(); ++a) {
    const DenseTensor analytic = grads[vars[a].id] ? *grads[vars[a].id] : DenseTensor(point[a].shape());
    r.max_rel_deviation = std::max(r.max_rel_deviation, relative_deviation(analytic, fd[a]));
  }
  return r;
}

/// Gradient check for one node kind at `point`.
///
/// kMatmul: point = {a[M,K], b[K,N]}. kAddBias: {x[M,N], bias[N]}. kRelu: {x}.
/// kMseLoss: {pred, target} (only pred is checked). kFp8Linear: {x, w} with the
/// RowwiseGwHp recipe; its weight gradient is compared against finite
/// differences of the high-precision linear, since the FP8 forward is
/// piecewise constant. kFakeQuantize is skipped: its gradient is a surrogate.
inline GradCheckResult grad_check(OpKind kind, const std::vector<DenseTensor>& point, double eps,
                                  std::uint64_t seed_salt = 1) {
  auto seed_for = [&](const Shape& shape) {
    DenseTensor s(shape);
    std::uint64_t z = seed_salt;
    for (float& v : s.data()) {
      z = z * 6364136223846793005ULL + 1442695040888963407ULL;
      v = static_cast<float>(static_cast<double>(z >> 40) / static_cast<double>(1ULL << 24)) * 2.0F - 1.0F;
    }
    return s;
  };
  switch (kind) {
    case OpKind::kMatmul: {
      auto build = [](Tape& t, const std::vector<Var>& v) { return t.matmul(v[0], v[1]); };
      return grad_check_fn(build, point, seed_for({point[0].dim(0), point[1].dim(1)}), eps);
    }
    case OpKind::kAddBias: {
      auto build = [](Tape& t, const std::vector<Var>& v) { return t.add_bias(v[0], v[1]); };
      return grad_check_fn(build, point, seed_for(point[0].shape()), eps);
    }
    case OpKind::kRelu: {
      auto build = [](Tape& t, const std::vector<Var>& v) { return t.relu(v[0]); };
      return grad_check_fn(build, point, seed_for(point[0].shape()), eps);
    }
    case OpKind::kMseLoss: {
      const DenseTensor target = point.at(1);
      auto build = [&target](Tape& t, const std::vector<Var>& v) { return t.mse_loss(v[0], target); };
      return grad_check_fn(build, {point[0]}, DenseTensor({1}, {1.0F}), eps);
    }
    case OpKind::kFp8Linear: {
      const DenseTensor& x = point.at(0);
      const DenseTensor& w = point.at(1);
      const DenseTensor seed = seed_for({x.dim(0), w.dim(0)});
      const DenseTensor analytic =
          fp8_linear_backward(x, w, seed, ScalingRecipe::kRowwiseGwHp).grad_weight;
      auto build = [&x](Tape& t, const std::vector<Var>& v) {
        return t.matmul(t.leaf(x, false), v[0], /*transpose_b=*/true);
      };
      const auto fd = finite_difference(build, {w}, seed, eps);
      return {false, "", relative_deviation(analytic, fd[0])};
    }
    case OpKind::kFakeQuantize:
      return {true, "fake_quantize uses a straight-through surrogate gradient", 0.0};
    case OpKind::kLeaf:
    case OpKind::kEmbedding:
      break;
  }
  return {true, "no gradient check defined for this node kind", 0.0};
}

}  // namespace lpkit
