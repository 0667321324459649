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

// FP8 training numerics: dynamic amax scaling, tensorwise and rowwise casts,
// emulated scaled GEMM, and linear forward/backward for the three recipes.

#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "lpkit/errors.hpp"
#include "lpkit/lp_dtypes.hpp"
#include "lpkit/tensor.hpp"

namespace lpkit {

inline constexpr float kFp8ScaleEps = 0x1p-20F;

enum class ScalingRecipe { kTensorwise, kRowwise, kRowwiseGwHp };

inline std::string_view recipe_name(ScalingRecipe r) {
  switch (r) {
    case ScalingRecipe::kTensorwise: return "tensorwise";
    case ScalingRecipe::kRowwise: return "rowwise";
    case ScalingRecipe::kRowwiseGwHp: return "rowwise_gw_hp";
  }
  return "";
}

inline ScalingRecipe parse_recipe(std::string_view s) {
  if (s == "tensorwise") return ScalingRecipe::kTensorwise;
  if (s == "rowwise") return ScalingRecipe::kRowwise;
  if (s == "rowwise_gw_hp") return ScalingRecipe::kRowwiseGwHp;
  throw ConfigError("unknown scaling recipe '" + std::string(s) +
                    "' (expected tensorwise, rowwise, rowwise_gw_hp)");
}

/// Per-operand format choices for a recipe. Defaults: tensorwise sends
/// gradients through E5M2, the rowwise recipes use E4M3 everywhere.
struct Fp8RecipeConfig {
  ScalingRecipe recipe = ScalingRecipe::kTensorwise;
  const FloatFormat* input_format = &formats::e4m3();
  const FloatFormat* weight_format = &formats::e4m3();
  const FloatFormat* grad_format = &formats::e5m2();
  // Accepted for config compatibility; there is no distributed path here.
  bool enable_fsdp_float8_all_gather = false;

  static Fp8RecipeConfig for_recipe(ScalingRecipe r) {
    Fp8RecipeConfig c;
    c.recipe = r;
    if (r != ScalingRecipe::kTensorwise) c.grad_format = &formats::e4m3();
    return c;
  }
};

/// Which slices carry their own scale.
enum class ScaleAxis {
  kTensor,  // one scale
  kRow,     // one scale per row (amax over columns)
  kColumn,  // one scale per column (amax over rows)
};

/// FP8 codes of a 2-D tensor plus the multiplicative scales used to produce
/// them: codes = encode(x * scale), so x ~= decode(code) / scale.
struct Fp8CastTensor {
  Shape shape;
  std::vector<std::uint8_t> codes;
  std::vector<float> scales;
  ScaleAxis scaled_axis = ScaleAxis::kTensor;
  const FloatFormat* format = &formats::e4m3();

  [[nodiscard]] float scale_for(std::size_t r, std::size_t c) const {
    switch (scaled_axis) {
      case ScaleAxis::kTensor: return scales[0];
      case ScaleAxis::kRow: return scales[r];
      case ScaleAxis::kColumn: return scales[c];
    }
    return scales[0];
  }
};

inline float amax(std::span<const float> x) {
  float m = 0.0F;
  for (float v : x) m = std::max(m, std::fabs(v));
  return m;
}

inline float amax(const DenseTensor& x) { return amax(x.data()); }

inline float scale_from_amax(float a, const FloatFormat& fmt) {
  return fmt.max_finite / std::max(a, kFp8ScaleEps);
}

inline Fp8CastTensor cast_fp8(const DenseTensor& x, ScaleAxis axis, const FloatFormat& fmt) {
  require_matrix(x, "fp8 cast input");
  const std::size_t rows = x.dim(0);
  const std::size_t cols = x.dim(1);
  Fp8CastTensor t;
  t.shape = x.shape();
  t.scaled_axis = axis;
  t.format = &fmt;
  switch (axis) {
    case ScaleAxis::kTensor:
      t.scales = {scale_from_amax(amax(x), fmt)};
      break;
    case ScaleAxis::kRow:
      t.scales.resize(rows);
      for (std::size_t r = 0; r < rows; ++r) t.scales[r] = scale_from_amax(amax(x.row(r)), fmt);
      break;
    case ScaleAxis::kColumn: {
      std::vector<float> col_amax(cols, 0.0F);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
          col_amax[c] = std::max(col_amax[c], std::fabs(x.at(r, c)));
        }
      }
      t.scales.resize(cols);
      for (std::size_t c = 0; c < cols; ++c) t.scales[c] = scale_from_amax(col_amax[c], fmt);
      break;
    }
  }
  t.codes.resize(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const float v = x.at(r, c);
      if (!std::isfinite(v)) throw ConfigError("fp8 cast: non-finite input");
      t.codes[r * cols + c] = static_cast<std::uint8_t>(encode_float(v * t.scale_for(r, c), fmt).bits);
    }
  }
  return t;
}

inline Fp8CastTensor cast_fp8_tensorwise(const DenseTensor& x, const FloatFormat& fmt) {
  return cast_fp8(x, ScaleAxis::kTensor, fmt);
}

/// `dim` names the dimension that indexes the scales: 0 gives one scale per
/// row, 1 one scale per column.
inline Fp8CastTensor cast_fp8_rowwise(const DenseTensor& x, int dim, const FloatFormat& fmt) {
  if (dim != 0 && dim != 1) throw ConfigError("rowwise cast dim must be 0 or 1");
  return cast_fp8(x, dim == 0 ? ScaleAxis::kRow : ScaleAxis::kColumn, fmt);
}

/// decode(code) / scale, elementwise in float.
inline DenseTensor fp8_dequantize(const Fp8CastTensor& t) {
  DenseTensor out(t.shape);
  const std::size_t cols = t.shape[1];
  for (std::size_t r = 0; r < t.shape[0]; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      out.at(r, c) = decode_float(t.codes[r * cols + c], *t.format) / t.scale_for(r, c);
    }
  }
  return out;
}

/// Emulated scaled GEMM. The left operand is scaled per row (or per tensor),
/// the right per column (or per tensor); result is gemm_ref over the
/// dequantized operands.
inline DenseTensor scaled_gemm(const Fp8CastTensor& a, const Fp8CastTensor& b) {
  if (a.scaled_axis == ScaleAxis::kColumn) {
    throw ConfigError("scaled_gemm: left operand must be scaled per tensor or per row");
  }
  if (b.scaled_axis == ScaleAxis::kRow) {
    throw ConfigError("scaled_gemm: right operand must be scaled per tensor or per column");
  }
  if (a.shape.size() != 2 || b.shape.size() != 2 || a.shape[1] != b.shape[0]) {
    throw ShapeError("scaled_gemm inner dimensions disagree: " + shape_str(a.shape) + " x " +
                     shape_str(b.shape));
  }
  return gemm_ref(fp8_dequantize(a), fp8_dequantize(b));
}

namespace detail {
inline ScaleAxis lhs_axis(ScalingRecipe r) {
  return r == ScalingRecipe::kTensorwise ? ScaleAxis::kTensor : ScaleAxis::kRow;
}
inline ScaleAxis rhs_axis(ScalingRecipe r) {
  return r == ScalingRecipe::kTensorwise ? ScaleAxis::kTensor : ScaleAxis::kColumn;
}
inline void check_linear_shapes(const DenseTensor& x, const DenseTensor& w) {
  require_matrix(x, "linear input");
  require_matrix(w, "linear weight");
  if (x.dim(1) != w.dim(1)) {
    throw ShapeError("linear input " + shape_str(x.shape()) + " does not match weight " +
                     shape_str(w.shape()));
  }
}
}  // namespace detail

/// y[M,N] = x[M,K] . w[N,K]^T with both operands cast per recipe.
inline DenseTensor fp8_linear_forward(const DenseTensor& x, const DenseTensor& w,
                                      const Fp8RecipeConfig& cfg) {
  detail::check_linear_shapes(x, w);
  const Fp8CastTensor xa = cast_fp8(x, detail::lhs_axis(cfg.recipe), *cfg.input_format);
  const Fp8CastTensor wb = cast_fp8(transpose(w), detail::rhs_axis(cfg.recipe), *cfg.weight_format);
  return scaled_gemm(xa, wb);
}

inline DenseTensor fp8_linear_forward(const DenseTensor& x, const DenseTensor& w, ScalingRecipe r) {
  return fp8_linear_forward(x, w, Fp8RecipeConfig::for_recipe(r));
}

struct LinearGrads {
  DenseTensor grad_input;   // [M, K]
  DenseTensor grad_weight;  // [N, K]
};

inline LinearGrads fp8_linear_backward(const DenseTensor& x, const DenseTensor& w,
                                       const DenseTensor& grad_out, const Fp8RecipeConfig& cfg) {
  detail::check_linear_shapes(x, w);
  require_matrix(grad_out, "grad_out");
  if (grad_out.dim(0) != x.dim(0) || grad_out.dim(1) != w.dim(0)) {
    throw ShapeError("grad_out " + shape_str(grad_out.shape()) + " does not match forward output [" +
                     std::to_string(x.dim(0)) + "," + std::to_string(w.dim(0)) + "]");
  }
  const ScaleAxis lhs = detail::lhs_axis(cfg.recipe);
  const ScaleAxis rhs = detail::rhs_axis(cfg.recipe);
  LinearGrads g;
  // grad_input[M,K] = grad_out[M,N] . w[N,K]
  g.grad_input = scaled_gemm(cast_fp8(grad_out, lhs, *cfg.grad_format),
                             cast_fp8(w, rhs, *cfg.weight_format));
  // grad_weight[N,K] = grad_out^T[N,M] . x[M,K]
  const DenseTensor grad_out_t = transpose(grad_out);
  if (cfg.recipe == ScalingRecipe::kRowwiseGwHp) {
    g.grad_weight = gemm_ref(grad_out_t, x);
  } else {
    g.grad_weight = scaled_gemm(cast_fp8(grad_out_t, lhs, *cfg.grad_format),
                                cast_fp8(x, rhs, *cfg.input_format));
  }
  return g;
}

inline LinearGrads fp8_linear_backward(const DenseTensor& x, const DenseTensor& w,
                                       const DenseTensor& grad_out, ScalingRecipe r) {
  return fp8_linear_backward(x, w, grad_out, Fp8RecipeConfig::for_recipe(r));
}

}  // namespace lpkit
