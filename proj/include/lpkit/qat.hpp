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

// Layer graph with the quantization-aware training flow:
//
//   prepare_qat   Standard -> FakeQuantized (weights and optionally
//                 activations are quantize-dequantized in float on every forward)
//   convert_qat   FakeQuantized -> Quantized, through the same PTQ entry point
//                 (quantize_model_weights) a plain post-training flow uses.

#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lpkit/autograd.hpp"
#include "lpkit/errors.hpp"
#include "lpkit/fake_quant.hpp"
#include "lpkit/quantized_tensor.hpp"
#include "lpkit/tensor.hpp"

namespace lpkit {

enum class LayerType { kLinear, kEmbedding, kRelu };
enum class LayerKind { kStandard, kFakeQuantized, kQuantized };

/// One layer. Linear weights are [N, K] (output features major); embedding
/// tables are [V, D] and take a [M, 1] tensor of integral ids as input.
struct Layer {
  LayerType type = LayerType::kLinear;
  LayerKind kind = LayerKind::kStandard;
  std::string name;
  DenseTensor weight;  // empty once Quantized
  std::optional<DenseTensor> bias;
  std::optional<FakeQuantizeConfig> activation_cfg;
  std::optional<FakeQuantizeConfig> weight_cfg;
  std::optional<QuantizedTensor> qweight;

  [[nodiscard]] bool has_weight() const { return type != LayerType::kRelu; }
  [[nodiscard]] std::string weight_name() const { return name + ".weight"; }
  [[nodiscard]] std::string bias_name() const { return name + ".bias"; }
};

class ModuleGraph {
 public:
  ModuleGraph& add_linear(std::string name, DenseTensor weight, std::optional<DenseTensor> bias = std::nullopt) {
    require_matrix(weight, "linear weight");
    if (bias && (bias->rank() != 1 || bias->dim(0) != weight.dim(0))) {
      throw ShapeError("bias of '" + name + "' must be [" + std::to_string(weight.dim(0)) + "]");
    }
    Layer l;
    l.type = LayerType::kLinear;
    l.name = std::move(name);
    l.weight = std::move(weight);
    l.bias = std::move(bias);
    check_chain(l);
    layers_.push_back(std::move(l));
    return *this;
  }

  ModuleGraph& add_embedding(std::string name, DenseTensor table) {
    require_matrix(table, "embedding table");
    Layer l;
    l.type = LayerType::kEmbedding;
    l.name = std::move(name);
    l.weight = std::move(table);
    check_chain(l);
    layers_.push_back(std::move(l));
    return *this;
  }

  ModuleGraph& add_relu(std::string name = "relu") {
    Layer l;
    l.type = LayerType::kRelu;
    l.name = std::move(name);
    layers_.push_back(std::move(l));
    return *this;
  }

  [[nodiscard]] const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& layers() { return layers_; }

  /// Dense parameters by name ("<layer>.weight", "<layer>.bias").
  [[nodiscard]] std::map<std::string, Shape> parameter_shapes() const {
    std::map<std::string, Shape> out;
    for (const Layer& l : layers_) {
      if (!l.has_weight()) continue;
      out[l.weight_name()] = l.qweight ? l.qweight->logical_shape : l.weight.shape();
      if (l.bias) out[l.bias_name()] = l.bias->shape();
    }
    return out;
  }

  /// Inference forward without a tape.
  [[nodiscard]] DenseTensor forward(const DenseTensor& input) const {
    DenseTensor x = input;
    for (const Layer& l : layers_) x = layer_forward(l, x);
    return x;
  }

  /// Recorded forward. `params` receives the leaf Var of every trainable
  /// tensor (weights and biases of Standard/FakeQuantized layers).
  Var forward(Tape& tape, const DenseTensor& input, std::map<std::string, Var>& params) const {
    Var x = tape.leaf(input, false);
    for (const Layer& l : layers_) {
      switch (l.type) {
        case LayerType::kRelu:
          x = tape.relu(x);
          break;
        case LayerType::kLinear: {
          if (l.kind == LayerKind::kQuantized) {
            x = tape.leaf(layer_forward(l, tape.value(x)), false);
            break;
          }
          Var w = params[l.weight_name()] = tape.leaf(l.weight);
          if (l.kind == LayerKind::kFakeQuantized) {
            if (l.activation_cfg) x = tape.fake_quantize(x, *l.activation_cfg);
            w = tape.fake_quantize(w, *l.weight_cfg);
          }
          x = tape.matmul(x, w, /*transpose_b=*/true);
          if (l.bias) x = tape.add_bias(x, params[l.bias_name()] = tape.leaf(*l.bias));
          break;
        }
        case LayerType::kEmbedding: {
          if (l.kind == LayerKind::kQuantized) {
            x = tape.leaf(layer_forward(l, tape.value(x)), false);
            break;
          }
          Var t = params[l.weight_name()] = tape.leaf(l.weight);
          if (l.kind == LayerKind::kFakeQuantized) t = tape.fake_quantize(t, *l.weight_cfg);
          x = tape.embedding(t, embedding_ids(tape.value(x), l.weight.dim(0)));
          break;
        }
      }
    }
    return x;
  }

  /// Mutable access to a trainable tensor by parameter name.
  DenseTensor& parameter(const std::string& name) {
    for (Layer& l : layers_) {
      if (!l.has_weight()) continue;
      if (name == l.weight_name() && l.kind != LayerKind::kQuantized) return l.weight;
      if (l.bias && name == l.bias_name()) return *l.bias;
    }
    throw ConfigError("no trainable parameter named '" + name + "'");
  }

  static std::vector<std::size_t> embedding_ids(const DenseTensor& x, std::size_t vocab) {
    if (x.rank() != 2 || x.dim(1) != 1) {
      throw ShapeError("embedding input must be [M,1] ids, got " + shape_str(x.shape()));
    }
    std::vector<std::size_t> ids(x.dim(0));
    for (std::size_t m = 0; m < ids.size(); ++m) {
      const float v = x[m];
      if (!(v >= 0.0F) || v != std::floor(v) || static_cast<std::size_t>(v) >= vocab) {
        throw BoundsError("embedding id " + std::to_string(v) + " is not a valid index below " +
                          std::to_string(vocab));
      }
      ids[m] = static_cast<std::size_t>(v);
    }
    return ids;
  }

  static DenseTensor layer_forward(const Layer& l, const DenseTensor& x) {
    switch (l.type) {
      case LayerType::kRelu: {
        DenseTensor y = x;
        for (float& v : y.data()) v = v > 0.0F ? v : 0.0F;
        return y;
      }
      case LayerType::kLinear: {
        if (l.kind == LayerKind::kQuantized) return qlinear(x, *l.qweight, l.bias);
        DenseTensor xin = x;
        DenseTensor w = l.weight;
        if (l.kind == LayerKind::kFakeQuantized) {
          if (l.activation_cfg) xin = fake_quantize(x, *l.activation_cfg).value;
          w = fake_quantize(l.weight, *l.weight_cfg).value;
        }
        const DenseTensor y = gemm_ref(xin, transpose(w));
        return l.bias ? add_bias(y, *l.bias) : y;
      }
      case LayerType::kEmbedding: {
        DenseTensor table;
        if (l.kind == LayerKind::kQuantized) {
          table = dequantize_tensor(*l.qweight);
        } else if (l.kind == LayerKind::kFakeQuantized) {
          table = fake_quantize(l.weight, *l.weight_cfg).value;
        } else {
          table = l.weight;
        }
        const auto ids = embedding_ids(x, table.dim(0));
        DenseTensor y({ids.size(), table.dim(1)});
        for (std::size_t m = 0; m < ids.size(); ++m) {
          for (std::size_t d = 0; d < table.dim(1); ++d) y.at(m, d) = table.at(ids[m], d);
        }
        return y;
      }
    }
    return x;
  }

 private:
  void check_chain(const Layer& l) const {
    // The most recent Linear fixes the width the next Linear must consume.
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
      if (it->type == LayerType::kRelu) continue;
      const std::size_t out_width = it->type == LayerType::kLinear
                                        ? (it->qweight ? it->qweight->rows() : it->weight.dim(0))
                                        : it->weight.dim(1);
      if (l.type == LayerType::kLinear && l.weight.dim(1) != out_width) {
        throw ShapeError("layer '" + l.name + "' expects width " + std::to_string(l.weight.dim(1)) +
                         " but '" + it->name + "' produces " + std::to_string(out_width));
      }
      if (l.type == LayerType::kEmbedding) {
        throw ShapeError("embedding '" + l.name + "' must be the first weighted layer");
      }
      return;
    }
  }

  std::vector<Layer> layers_;
};

/// Swaps every Linear and Embedding for its fake-quantized counterpart.
/// Embeddings only fake-quantize their table.
inline ModuleGraph prepare_qat(ModuleGraph model, const std::optional<FakeQuantizeConfig>& activation_cfg,
                               const FakeQuantizeConfig& weight_cfg) {
  weight_cfg.validate();
  if (activation_cfg) activation_cfg->validate();
  for (Layer& l : model.layers()) {
    if (!l.has_weight()) continue;
    if (l.kind != LayerKind::kStandard) {
      throw ConfigError("layer '" + l.name + "' is already prepared or quantized");
    }
    l.kind = LayerKind::kFakeQuantized;
    l.weight_cfg = weight_cfg;
    if (l.type == LayerType::kLinear) l.activation_cfg = activation_cfg;
  }
  return model;
}

namespace detail {

/// Weight-side fake-quantize config a scheme reproduces, if any.
inline std::optional<FakeQuantizeConfig> scheme_weight_cfg(const QuantScheme& s) {
  using Kind = QuantScheme::Kind;
  switch (s.kind) {
    case Kind::kInt4WeightOnly:
    case Kind::kInt8DynamicActivationInt4Weight:
      return FakeQuantizeConfig::grouped(4, s.group_size);
    case Kind::kInt8WeightOnly:
      return FakeQuantizeConfig::per_channel(8);
    default:
      return std::nullopt;
  }
}

inline std::optional<FakeQuantizeConfig> scheme_activation_cfg(const QuantScheme& s) {
  if (s.kind == QuantScheme::Kind::kInt8DynamicActivationInt4Weight) {
    return FakeQuantizeConfig::per_token(8, /*symmetric=*/false);
  }
  return std::nullopt;
}

/// Weight-side scheme used for embedding tables (no activation path).
inline QuantScheme embedding_scheme(const QuantScheme& s) {
  if (s.kind == QuantScheme::Kind::kInt8DynamicActivationInt4Weight) {
    return QuantScheme::int4_weight_only(s.group_size);
  }
  return s;
}

inline void quantize_layers(ModuleGraph& model, const QuantScheme& scheme, LayerKind expected) {
  for (Layer& l : model.layers()) {
    if (!l.has_weight()) continue;
    if (l.kind != expected) {
      throw ConfigError(expected == LayerKind::kFakeQuantized
                            ? "layer '" + l.name + "' was not prepared for QAT"
                            : "layer '" + l.name + "' is not a standard layer");
    }
  }
  std::map<std::string, DenseTensor> linear;
  std::map<std::string, DenseTensor> embedding;
  for (const Layer& l : model.layers()) {
    if (l.type == LayerType::kLinear) linear.emplace(l.weight_name(), l.weight);
    if (l.type == LayerType::kEmbedding) embedding.emplace(l.weight_name(), l.weight);
  }
  auto q_linear = quantize_model_weights(linear, scheme);
  auto q_embedding = quantize_model_weights(embedding, embedding_scheme(scheme));
  for (Layer& l : model.layers()) {
    if (!l.has_weight()) continue;
    auto& source = l.type == LayerType::kLinear ? q_linear : q_embedding;
    l.qweight = std::move(source.at(l.weight_name()));
    l.weight = DenseTensor();
    l.kind = LayerKind::kQuantized;
    l.activation_cfg.reset();
    l.weight_cfg.reset();
  }
}

}  // namespace detail

/// Prepares with the fake-quantize configs that `scheme` reproduces at convert.
inline ModuleGraph prepare_qat(ModuleGraph model, const QuantScheme& scheme) {
  const auto w = detail::scheme_weight_cfg(scheme);
  if (!w) throw ConfigError("scheme " + scheme.to_string() + " has no QAT counterpart");
  return prepare_qat(std::move(model), detail::scheme_activation_cfg(scheme), *w);
}

/// Post-training quantization of a standard model.
inline ModuleGraph quantize_graph(ModuleGraph model, const QuantScheme& scheme) {
  detail::quantize_layers(model, scheme, LayerKind::kStandard);
  return model;
}

/// Replaces fake quantization with real quantized weights. The scheme must
/// reproduce the prepare-time configs exactly.
inline ModuleGraph convert_qat(ModuleGraph model, const QuantScheme& scheme) {
  const auto want_w = detail::scheme_weight_cfg(scheme);
  const auto want_a = detail::scheme_activation_cfg(scheme);
  for (const Layer& l : model.layers()) {
    if (!l.has_weight()) continue;
    if (l.kind != LayerKind::kFakeQuantized) {
      throw ConfigError("layer '" + l.name + "' was not prepared for QAT");
    }
    if (!want_w || *l.weight_cfg != *want_w) {
      throw ConfigError("scheme " + scheme.to_string() + " does not match the weight fake-quantize config of '" +
                        l.name + "'");
    }
    if (l.type == LayerType::kLinear && l.activation_cfg != want_a) {
      throw ConfigError("scheme " + scheme.to_string() +
                        " does not match the activation fake-quantize config of '" + l.name + "'");
    }
  }
  detail::quantize_layers(model, scheme, LayerKind::kFakeQuantized);
  return model;
}

}  // namespace lpkit
