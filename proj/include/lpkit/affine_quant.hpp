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

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "lpkit/errors.hpp"
#include "lpkit/tensor.hpp"

namespace lpkit {

/// Degenerate-unit floor for scales (2^-20).
inline constexpr float kQuantEps = 0x1p-20F;

/// Which elements share one (scale, zero_point) pair.
///
/// Units are laid out over the tensor viewed as [rows, cols] (leading dims
/// flattened): PerTensor is one unit, PerAxis(0) one per row, PerAxis(1) one
/// per column, PerGroup(g) is g contiguous elements along cols (row-major
/// unit order), PerToken one per row of an activation.
struct Granularity {
  enum class Kind { kPerTensor, kPerAxis, kPerGroup, kPerToken };
  Kind kind = Kind::kPerTensor;
  std::size_t param = 0;  // axis for PerAxis, group size for PerGroup

  static Granularity per_tensor() { return {Kind::kPerTensor, 0}; }
  static Granularity per_axis(std::size_t axis) { return {Kind::kPerAxis, axis}; }
  static Granularity per_group(std::size_t group_size) { return {Kind::kPerGroup, group_size}; }
  static Granularity per_token() { return {Kind::kPerToken, 0}; }

  friend bool operator==(const Granularity&, const Granularity&) = default;

  [[nodiscard]] std::string to_string() const {
    switch (kind) {
      case Kind::kPerTensor: return "per_tensor";
      case Kind::kPerAxis: return "per_axis(" + std::to_string(param) + ")";
      case Kind::kPerGroup: return "per_group(" + std::to_string(param) + ")";
      case Kind::kPerToken: return "per_token";
    }
    return "";
  }

  static Granularity parse(std::string_view s) {
    auto arg = [&](std::string_view prefix) -> std::optional<std::size_t> {
      if (s.size() > prefix.size() + 1 && s.substr(0, prefix.size()) == prefix && s.back() == ')') {
        return std::stoul(std::string(s.substr(prefix.size(), s.size() - prefix.size() - 1)));
      }
      return std::nullopt;
    };
    if (s == "per_tensor") return per_tensor();
    if (s == "per_token") return per_token();
    if (auto a = arg("per_axis(")) return per_axis(*a);
    if (auto g = arg("per_group(")) return per_group(*g);
    throw ConfigError("unknown granularity '" + std::string(s) + "'");
  }
};

/// Maps element indices of a [rows, cols] view onto granularity units.
class UnitLayout {
 public:
  UnitLayout(const Shape& shape, Granularity gran) : gran_(gran) {
    if (shape.empty()) throw ShapeError("cannot quantize a rank-0 tensor");
    cols_ = shape.back();
    rows_ = cols_ == 0 ? 0 : shape_numel(shape) / cols_;
    switch (gran.kind) {
      case Granularity::Kind::kPerTensor:
        units_ = 1;
        break;
      case Granularity::Kind::kPerAxis:
        if (shape.size() != 2 || gran.param > 1) {
          throw ConfigError("per_axis granularity needs a 2-D tensor and axis 0 or 1, got shape " +
                            shape_str(shape) + " axis " + std::to_string(gran.param));
        }
        units_ = gran.param == 0 ? rows_ : cols_;
        break;
      case Granularity::Kind::kPerGroup:
        if (gran.param == 0 || cols_ % gran.param != 0) {
          throw ConfigError("group size " + std::to_string(gran.param) +
                            " does not divide the last dimension of " + shape_str(shape));
        }
        units_ = rows_ * (cols_ / gran.param);
        break;
      case Granularity::Kind::kPerToken:
        if (shape.size() < 2) {
          throw ConfigError("per_token granularity needs a leading token dimension, got shape " +
                            shape_str(shape));
        }
        units_ = rows_;
        break;
    }
  }

  [[nodiscard]] std::size_t units() const { return units_; }

  [[nodiscard]] std::size_t unit_of(std::size_t flat) const {
    switch (gran_.kind) {
      case Granularity::Kind::kPerTensor: return 0;
      case Granularity::Kind::kPerAxis: return gran_.param == 0 ? flat / cols_ : flat % cols_;
      case Granularity::Kind::kPerGroup: return flat / gran_.param;
      case Granularity::Kind::kPerToken: return flat / cols_;
    }
    return 0;
  }

 private:
  Granularity gran_;
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::size_t units_ = 0;
};

/// Scales and zero-points for one tensor at a given granularity.
struct AffineQParams {
  Granularity granularity;
  std::vector<float> scales;
  std::vector<std::int32_t> zero_points;
  std::int32_t qmin = -128;
  std::int32_t qmax = 127;
  bool symmetric = true;
  int target_bits = 8;
};

inline std::pair<std::int32_t, std::int32_t> signed_range(int bits) {
  switch (bits) {
    case 4: return {-8, 7};
    case 8: return {-128, 127};
    default: throw ConfigError("unsupported integer width " + std::to_string(bits) + " (expected 4 or 8)");
  }
}

/// Round half to even in float, independent of the ambient rounding mode.
inline float round_half_even(float v) {
  const float f = std::floor(v);
  const float diff = v - f;
  if (diff > 0.5F) return f + 1.0F;
  if (diff < 0.5F) return f;
  return std::fmod(f, 2.0F) == 0.0F ? f : f + 1.0F;
}

inline AffineQParams choose_qparams(const DenseTensor& x, Granularity gran, int bits, bool symmetric,
                                    float eps = kQuantEps) {
  const auto [qmin, qmax] = signed_range(bits);
  const UnitLayout layout(x.shape(), gran);
  std::vector<float> lo(layout.units(), 0.0F);
  std::vector<float> hi(layout.units(), 0.0F);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const float v = x[i];
    if (!std::isfinite(v)) {
      throw ConfigError("choose_qparams: non-finite value at flat index " + std::to_string(i));
    }
    const std::size_t u = layout.unit_of(i);
    // Ranges start at zero, so every unit's range includes 0.
    lo[u] = std::min(lo[u], v);
    hi[u] = std::max(hi[u], v);
  }
  AffineQParams qp;
  qp.granularity = gran;
  qp.qmin = qmin;
  qp.qmax = qmax;
  qp.symmetric = symmetric;
  qp.target_bits = bits;
  qp.scales.resize(layout.units());
  qp.zero_points.assign(layout.units(), 0);
  for (std::size_t u = 0; u < layout.units(); ++u) {
    if (symmetric) {
      const float absmax = std::max(-lo[u], hi[u]);
      qp.scales[u] = std::max(absmax, eps) / static_cast<float>(qmax);
    } else {
      const float scale = std::max(hi[u] - lo[u], eps) / static_cast<float>(qmax - qmin);
      qp.scales[u] = scale;
      const float zp = static_cast<float>(qmin) - round_half_even(lo[u] / scale);
      qp.zero_points[u] =
          static_cast<std::int32_t>(std::clamp(zp, static_cast<float>(qmin), static_cast<float>(qmax)));
    }
  }
  return qp;
}

inline std::int32_t quantize_value(float v, float scale, std::int32_t zp, std::int32_t qmin,
                                   std::int32_t qmax) {
  const float q = round_half_even(v / scale) + static_cast<float>(zp);
  return static_cast<std::int32_t>(
      std::clamp(q, static_cast<float>(qmin), static_cast<float>(qmax)));
}

inline float dequantize_value(std::int32_t q, float scale, std::int32_t zp) {
  return static_cast<float>(q - zp) * scale;
}

/// q = clamp(round_half_even(x / scale) + zero_point, qmin, qmax)
inline std::vector<std::int32_t> quantize_affine(const DenseTensor& x, const AffineQParams& qp) {
  const UnitLayout layout(x.shape(), qp.granularity);
  if (layout.units() != qp.scales.size() || qp.zero_points.size() != qp.scales.size()) {
    throw ShapeError("qparams carry " + std::to_string(qp.scales.size()) + " units but " +
                     shape_str(x.shape()) + " needs " + std::to_string(layout.units()));
  }
  std::vector<std::int32_t> codes(x.numel());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const std::size_t u = layout.unit_of(i);
    codes[i] = quantize_value(x[i], qp.scales[u], qp.zero_points[u], qp.qmin, qp.qmax);
  }
  return codes;
}

/// dq = (q - zero_point) * scale
inline DenseTensor dequantize_affine(std::span<const std::int32_t> codes, const Shape& shape,
                                     const AffineQParams& qp) {
  const UnitLayout layout(shape, qp.granularity);
  if (codes.size() != shape_numel(shape)) {
    throw ShapeError("code count " + std::to_string(codes.size()) + " does not match shape " +
                     shape_str(shape));
  }
  if (layout.units() != qp.scales.size()) {
    throw ShapeError("qparams carry " + std::to_string(qp.scales.size()) + " units but " +
                     shape_str(shape) + " needs " + std::to_string(layout.units()));
  }
  DenseTensor out(shape);
  for (std::size_t i = 0; i < codes.size(); ++i) {
    const std::size_t u = layout.unit_of(i);
    out[i] = dequantize_value(codes[i], qp.scales[u], qp.zero_points[u]);
  }
  return out;
}

struct TokenQuantized {
  std::vector<std::int32_t> codes;
  AffineQParams qparams;
};

/// Dynamic per-row activation quantization: independent qparams per token.
inline TokenQuantized dynamic_quant_per_token(const DenseTensor& x, int bits, bool symmetric) {
  if (x.rank() < 2 || x.rows() == 0) {
    throw ShapeError("per-token quantization needs [M, K] with M >= 1, got " + shape_str(x.shape()));
  }
  TokenQuantized out;
  out.qparams = choose_qparams(x, Granularity::per_token(), bits, symmetric);
  out.codes = quantize_affine(x, out.qparams);
  return out;
}

/// Forward of fake quantization: dequantize(quantize(x)) with the given qparams.
inline DenseTensor quantize_dequantize(const DenseTensor& x, const AffineQParams& qp) {
  return dequantize_affine(quantize_affine(x, qp), x.shape(), qp);
}

}  // namespace lpkit
