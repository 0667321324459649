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

// Toy teacher-student regression runs for QAT recovery and FP8 loss curves.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "lpkit/autograd.hpp"
#include "lpkit/float8_train.hpp"
#include "lpkit/qat.hpp"
#include "lpkit/rng.hpp"

namespace lpkit {

struct ToyConfig {
  std::size_t d_in = 32;
  std::size_t hidden = 64;
  std::size_t d_out = 8;
  std::size_t batch = 32;
  std::size_t eval_rows = 512;
  float lr = 0.05F;
  double label_noise = 0.0;
  /// QAT demo student = teacher + N(0, (init_perturbation * weight std)^2).
  double init_perturbation = 0.5;
  /// Cosine decay of lr to zero over the run.
  bool cosine_lr = false;
};

inline float scheduled_lr(const ToyConfig& c, std::size_t step, std::size_t steps) {
  if (!c.cosine_lr || steps == 0) return c.lr;
  const double t = static_cast<double>(step) / static_cast<double>(steps);
  return static_cast<float>(0.5 * double(c.lr) * (1.0 + std::cos(std::numbers::pi * t)));
}

/// Two-layer ReLU MLP with random N(0, 1/fan_in) weights and small biases.
inline ModuleGraph make_mlp(const ToyConfig& c, SplitMix64& rng) {
  ModuleGraph g;
  g.add_linear("fc1", random_normal({c.hidden, c.d_in}, rng, 1.0 / std::sqrt(double(c.d_in))),
               random_normal({c.hidden}, rng, 0.1));
  g.add_relu("act");
  g.add_linear("fc2", random_normal({c.d_out, c.hidden}, rng, 1.0 / std::sqrt(double(c.hidden))),
               random_normal({c.d_out}, rng, 0.1));
  return g;
}

/// Bias-free ReLU chain: fc0 [n,k], then fc1.. [n,n]. Weights ~ N(0, 1/fan_in).
inline ModuleGraph make_fixture(std::size_t n, std::size_t k, std::size_t layers, std::uint64_t seed) {
  if (n == 0 || k == 0 || layers == 0) throw ConfigError("fixture needs n, k and layers >= 1");
  SplitMix64 rng(seed);
  ModuleGraph g;
  for (std::size_t i = 0; i < layers; ++i) {
    const std::size_t fan_in = i == 0 ? k : n;
    if (i > 0) g.add_relu("relu" + std::to_string(i - 1));
    g.add_linear("fc" + std::to_string(i), random_normal({n, fan_in}, rng, 1.0 / std::sqrt(double(fan_in))));
  }
  return g;
}

namespace detail {

/// A "pretrained" student: the teacher with every parameter jittered.
inline ModuleGraph perturbed_copy(const ModuleGraph& teacher, const ToyConfig& c, SplitMix64& rng) {
  ModuleGraph g = teacher;
  for (Layer& l : g.layers()) {
    if (!l.has_weight()) continue;
    const double wstd = 1.0 / std::sqrt(double(l.weight.dim(1)));
    for (float& v : l.weight.data()) v += static_cast<float>(rng.normal() * wstd * c.init_perturbation);
    if (l.bias) {
      for (float& v : l.bias->data()) v += static_cast<float>(rng.normal() * 0.1 * c.init_perturbation);
    }
  }
  return g;
}

inline double eval_mse(const ModuleGraph& g, const DenseTensor& x, const DenseTensor& y) {
  const DenseTensor p = g.forward(x);
  double s = 0.0;
  for (std::size_t i = 0; i < p.numel(); ++i) {
    const double d = double(p[i]) - double(y[i]);
    s += d * d;
  }
  return s / static_cast<double>(p.numel());
}

/// One SGD step on the recorded graph; returns the batch loss.
inline double train_step(ModuleGraph& g, const DenseTensor& x, const DenseTensor& y, float lr) {
  Tape tape;
  std::map<std::string, Var> params;
  const Var loss = tape.mse_loss(g.forward(tape, x, params), y);
  const auto grads = tape.backward(loss, DenseTensor::filled({1}, 1.0F));
  for (const auto& [name, v] : params) {
    if (grads[v.id]) sgd_step(g.parameter(name), *grads[v.id], lr);
  }
  return tape.value(loss)[0];
}

struct Batch {
  DenseTensor x;
  DenseTensor y;
};

inline Batch teacher_batch(const ModuleGraph& teacher, std::size_t rows, std::size_t d_in, double noise,
                           SplitMix64& rng) {
  Batch b{random_normal({rows, d_in}, rng), {}};
  b.y = teacher.forward(b.x);
  if (noise > 0.0) {
    for (float& v : b.y.data()) v += static_cast<float>(rng.normal() * noise);
  }
  return b;
}

inline std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace detail

inline ToyConfig qat_demo_config() {
  ToyConfig c;
  c.lr = 0.2F;
  c.cosine_lr = true;
  return c;
}

struct QatDemoResult {
  std::string csv;
  double fp_loss = 0.0;
  double ptq_loss = 0.0;
  double qat_loss = 0.0;
  [[nodiscard]] double recovery() const {
    const double gap = ptq_loss - fp_loss;
    return gap == 0.0 ? 0.0 : (ptq_loss - qat_loss) / gap;
  }
};

/// Fine-tuning setup: both students start from the same perturbed copy of the
/// teacher and see the same batches. Rows log the QAT train loss, the baseline eval loss, and the QAT
/// model's quantized eval loss (fake-quant forward, which equals the converted
/// model). The trailing comment line carries the final losses and recovery.
inline QatDemoResult run_qat_demo(std::uint64_t seed, std::size_t steps, const QuantScheme& scheme,
                                  const ToyConfig& c = qat_demo_config()) {
  SplitMix64 rng(seed);
  const ModuleGraph teacher = make_mlp(c, rng);
  const ModuleGraph init = detail::perturbed_copy(teacher, c, rng);
  SplitMix64 eval_rng(seed ^ 0xE7A1E7A1E7A1E7A1ULL);
  const detail::Batch eval = detail::teacher_batch(teacher, c.eval_rows, c.d_in, 0.0, eval_rng);

  ModuleGraph fp = init;
  ModuleGraph qat = prepare_qat(init, scheme);

  QatDemoResult r;
  std::ostringstream out;
  out << "step,train_loss,eval_loss_fp,eval_loss_quantized\n";
  SplitMix64 data_rng(seed * 0x9E3779B97F4A7C15ULL + 1);
  for (std::size_t s = 1; s <= steps; ++s) {
    const detail::Batch b = detail::teacher_batch(teacher, c.batch, c.d_in, c.label_noise, data_rng);
    const float lr = scheduled_lr(c, s - 1, steps);
    detail::train_step(fp, b.x, b.y, lr);
    const double train = detail::train_step(qat, b.x, b.y, lr);
    out << s << ',' << detail::fmt(train) << ',' << detail::fmt(detail::eval_mse(fp, eval.x, eval.y)) << ','
        << detail::fmt(detail::eval_mse(qat, eval.x, eval.y)) << '\n';
  }
  r.fp_loss = detail::eval_mse(fp, eval.x, eval.y);
  r.ptq_loss = detail::eval_mse(quantize_graph(fp, scheme), eval.x, eval.y);
  r.qat_loss = detail::eval_mse(convert_qat(qat, scheme), eval.x, eval.y);
  out << "# fp_loss=" << detail::fmt(r.fp_loss) << " ptq_loss=" << detail::fmt(r.ptq_loss)
      << " qat_loss=" << detail::fmt(r.qat_loss) << " recovery=" << detail::fmt(r.recovery()) << '\n';
  r.csv = out.str();
  return r;
}

inline constexpr std::size_t kFp8FinalWindow = 100;

struct Fp8DemoResult {
  std::string csv;
  // Indexed none, tensorwise, rowwise, rowwise_gw_hp; empty when not run.
  std::vector<std::vector<double>> losses = std::vector<std::vector<double>>(4);
  /// Mean training loss over the last kFp8FinalWindow steps.
  [[nodiscard]] double final_loss(std::size_t column) const {
    const auto& v = losses.at(column);
    if (v.empty()) return std::nan("");
    const std::size_t n = std::min(kFp8FinalWindow, v.size());
    double s = 0.0;
    for (std::size_t i = v.size() - n; i < v.size(); ++i) s += v[i];
    return s / static_cast<double>(n);
  }
};

namespace detail {

/// Training loss curve for one recipe; nullopt runs plain matmuls.
inline std::vector<double> fp8_curve(const ModuleGraph& teacher, const ModuleGraph& init, std::uint64_t data_seed,
                                     std::size_t steps, const std::optional<Fp8RecipeConfig>& recipe,
                                     const ToyConfig& c) {
  ModuleGraph g = init;
  SplitMix64 data_rng(data_seed);
  std::vector<double> curve;
  curve.reserve(steps);
  for (std::size_t s = 0; s < steps; ++s) {
    const Batch b = teacher_batch(teacher, c.batch, c.d_in, c.label_noise, data_rng);
    if (!recipe) {
      curve.push_back(train_step(g, b.x, b.y, c.lr));
      continue;
    }
    Tape tape;
    std::map<std::string, Var> params;
    Var x = tape.leaf(b.x, false);
    for (const Layer& l : g.layers()) {
      if (l.type == LayerType::kRelu) {
        x = tape.relu(x);
        continue;
      }
      const Var w = params[l.weight_name()] = tape.leaf(l.weight);
      x = tape.fp8_linear(x, w, *recipe);
      if (l.bias) x = tape.add_bias(x, params[l.bias_name()] = tape.leaf(*l.bias));
    }
    const Var loss = tape.mse_loss(x, b.y);
    const auto grads = tape.backward(loss, DenseTensor::filled({1}, 1.0F));
    for (const auto& [name, v] : params) sgd_step(g.parameter(name), *grads[v.id], c.lr);
    curve.push_back(tape.value(loss)[0]);
  }
  return curve;
}

}  // namespace detail

inline ToyConfig fp8_demo_config() {
  ToyConfig c;
  c.label_noise = 0.1;
  return c;
}

/// Trains the same init on the same batches under high precision and the
/// requested recipe ("all" runs every recipe). Columns for recipes that were
/// not run are left empty.
inline Fp8DemoResult run_fp8_demo(std::uint64_t seed, std::size_t steps, const std::string& recipe = "all",
                                  const ToyConfig& c = fp8_demo_config()) {
  std::vector<bool> run(4, recipe == "all");
  run[0] = true;
  if (recipe != "all" && recipe != "none") run[1 + static_cast<std::size_t>(parse_recipe(recipe))] = true;

  SplitMix64 rng(seed);
  const ModuleGraph teacher = make_mlp(c, rng);
  const ModuleGraph init = make_mlp(c, rng);
  const std::uint64_t data_seed = seed * 0x9E3779B97F4A7C15ULL + 2;

  Fp8DemoResult r;
  r.losses[0] = detail::fp8_curve(teacher, init, data_seed, steps, std::nullopt, c);
  const ScalingRecipe recipes[] = {ScalingRecipe::kTensorwise, ScalingRecipe::kRowwise, ScalingRecipe::kRowwiseGwHp};
  for (std::size_t i = 0; i < 3; ++i) {
    if (run[i + 1]) {
      r.losses[i + 1] = detail::fp8_curve(teacher, init, data_seed, steps, Fp8RecipeConfig::for_recipe(recipes[i]), c);
    }
  }
  std::ostringstream out;
  out << "step,loss_none,loss_tensorwise,loss_rowwise,loss_rowwise_gw_hp\n";
  for (std::size_t s = 0; s < steps; ++s) {
    out << (s + 1);
    for (const auto& col : r.losses) {
      out << ',';
      if (!col.empty()) out << detail::fmt(col[s]);
    }
    out << '\n';
  }
  r.csv = out.str();
  return r;
}

}  // namespace lpkit
