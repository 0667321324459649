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

// Weight quantization schemes and the quantized tensor that carries codes and
// scales as one unit. `qlinear` is the post-quantization compute path: it
// dispatches on the scheme the same way a tensor subclass would.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lpkit/affine_quant.hpp"
#include "lpkit/errors.hpp"
#include "lpkit/float8_train.hpp"
#include "lpkit/lp_dtypes.hpp"
#include "lpkit/tensor.hpp"

namespace lpkit {

enum class Fp8Granularity { kPerRow, kPerTensor };

struct QuantScheme {
  enum class Kind {
    kInt4WeightOnly,
    kInt8WeightOnly,
    kFloat8WeightOnly,
    kFloat8DynamicActivationFloat8Weight,
    kInt8DynamicActivationInt4Weight,
    kNf4WeightOnly,
  };

  Kind kind = Kind::kInt8WeightOnly;
  std::size_t group_size = 0;  // group size for int4 schemes, block size for NF4
  Fp8Granularity fp8_granularity = Fp8Granularity::kPerRow;

  static QuantScheme int4_weight_only(std::size_t group_size) {
    return {Kind::kInt4WeightOnly, group_size, Fp8Granularity::kPerRow};
  }
  static QuantScheme int8_weight_only() { return {Kind::kInt8WeightOnly, 0, Fp8Granularity::kPerRow}; }
  static QuantScheme float8_weight_only() {
    return {Kind::kFloat8WeightOnly, 0, Fp8Granularity::kPerRow};
  }
  static QuantScheme float8_dynamic(Fp8Granularity g) {
    return {Kind::kFloat8DynamicActivationFloat8Weight, 0, g};
  }
  static QuantScheme int8_dynamic_int4_weight(std::size_t group_size) {
    return {Kind::kInt8DynamicActivationInt4Weight, group_size, Fp8Granularity::kPerRow};
  }
  static QuantScheme nf4_weight_only(std::size_t block_size) {
    return {Kind::kNf4WeightOnly, block_size, Fp8Granularity::kPerRow};
  }

  friend bool operator==(const QuantScheme&, const QuantScheme&) = default;

  [[nodiscard]] bool weight_only() const {
    return kind != Kind::kFloat8DynamicActivationFloat8Weight &&
           kind != Kind::kInt8DynamicActivationInt4Weight;
  }
  [[nodiscard]] bool uses_groups() const {
    return kind == Kind::kInt4WeightOnly || kind == Kind::kInt8DynamicActivationInt4Weight ||
           kind == Kind::kNf4WeightOnly;
  }
  /// Bits per stored weight code.
  [[nodiscard]] int weight_bits() const {
    switch (kind) {
      case Kind::kInt4WeightOnly:
      case Kind::kInt8DynamicActivationInt4Weight:
      case Kind::kNf4WeightOnly: return 4;
      default: return 8;
    }
  }

  [[nodiscard]] std::string to_string() const {
    switch (kind) {
      case Kind::kInt4WeightOnly: return "Int4WeightOnly(" + std::to_string(group_size) + ")";
      case Kind::kInt8WeightOnly: return "Int8WeightOnly";
      case Kind::kFloat8WeightOnly: return "Float8WeightOnly";
      case Kind::kFloat8DynamicActivationFloat8Weight:
        return std::string("Float8DynamicActivationFloat8Weight(") +
               (fp8_granularity == Fp8Granularity::kPerRow ? "PerRow" : "PerTensor") + ")";
      case Kind::kInt8DynamicActivationInt4Weight:
        return "Int8DynamicActivationInt4Weight(" + std::to_string(group_size) + ")";
      case Kind::kNf4WeightOnly: return "Nf4WeightOnly(" + std::to_string(group_size) + ")";
    }
    return "";
  }

  /// Names accepted by `parse` without a parenthesised argument, plus their
  /// short aliases.
  static const std::vector<std::string>& valid_names() {
    static const std::vector<std::string> names = {
        "Int4WeightOnly",
        "Int8WeightOnly",
        "Float8WeightOnly",
        "Float8DynamicActivationFloat8Weight",
        "Int8DynamicActivationInt4Weight",
        "Nf4WeightOnly",
        "int4wo",
        "int8wo",
        "float8wo",
        "float8dq-row",
        "float8dq-tensor",
        "8da4w",
        "nf4",
    };
    return names;
  }

  /// Parses either the serialized form ("Int4WeightOnly(64)") or a bare name
  /// plus a separately supplied group size.
  static QuantScheme parse(std::string_view text, std::optional<std::size_t> group_size = {}) {
    std::string name(text);
    std::optional<std::string> arg;
    if (const auto open = name.find('('); open != std::string::npos && name.back() == ')') {
      arg = name.substr(open + 1, name.size() - open - 2);
      name = name.substr(0, open);
    }
    auto need_group = [&](std::size_t fallback) -> std::size_t {
      std::size_t g = fallback;
      if (arg) {
        try {
          g = std::stoul(*arg);
        } catch (const std::exception&) {
          throw ConfigError("bad group size '" + *arg + "' in scheme '" + std::string(text) + "'");
        }
      }
      if (group_size) g = *group_size;
      if (g == 0) throw ConfigError("group size must be positive in scheme '" + std::string(text) + "'");
      return g;
    };
    if (name == "Int4WeightOnly" || name == "int4wo") return int4_weight_only(need_group(128));
    if (name == "Int8WeightOnly" || name == "int8wo") return int8_weight_only();
    if (name == "Float8WeightOnly" || name == "float8wo") return float8_weight_only();
    if (name == "Int8DynamicActivationInt4Weight" || name == "8da4w") {
      return int8_dynamic_int4_weight(need_group(32));
    }
    if (name == "Nf4WeightOnly" || name == "nf4") return nf4_weight_only(need_group(64));
    if (name == "float8dq-row") return float8_dynamic(Fp8Granularity::kPerRow);
    if (name == "float8dq-tensor") return float8_dynamic(Fp8Granularity::kPerTensor);
    if (name == "Float8DynamicActivationFloat8Weight") {
      if (!arg || *arg == "PerRow") return float8_dynamic(Fp8Granularity::kPerRow);
      if (*arg == "PerTensor") return float8_dynamic(Fp8Granularity::kPerTensor);
    }
    std::string msg = "unknown quantization scheme '" + std::string(text) + "'; valid schemes:";
    for (const auto& n : valid_names()) msg += " " + n;
    throw ConfigError(msg);
  }
};

/// Codes plus scales for one weight tensor of logical shape [N, K].
///
/// Integer schemes keep AffineQParams (zero points are all zero since weights
/// are symmetric). FP8 schemes keep multiplicative per-row or per-tensor scales
/// in `qparams.scales`; NF4 keeps per-block absmax there.
struct QuantizedTensor {
  Shape logical_shape;
  QuantScheme scheme;
  std::vector<std::uint8_t> codes;
  AffineQParams qparams;

  [[nodiscard]] std::size_t rows() const { return logical_shape.at(0); }
  [[nodiscard]] std::size_t cols() const { return logical_shape.at(1); }
};

/// Expected byte length of `codes` for a scheme at [N, K].
inline std::size_t scheme_code_bytes(const QuantScheme& s, std::size_t n, std::size_t k) {
  return s.weight_bits() == 4 ? (n * k + 1) / 2 : n * k;
}

/// Number of stored 32-bit scales for a scheme at [N, K].
inline std::size_t scheme_scale_count(const QuantScheme& s, std::size_t n, std::size_t k) {
  if (s.uses_groups()) return n * k / s.group_size;
  if (s.kind == QuantScheme::Kind::kFloat8DynamicActivationFloat8Weight &&
      s.fp8_granularity == Fp8Granularity::kPerTensor) {
    return 1;
  }
  return n;
}

/// Analytic payload size: packed codes plus 32-bit scales. Weights are
/// symmetric so no zero points are stored.
inline std::size_t scheme_payload_bytes(const QuantScheme& s, std::size_t n, std::size_t k) {
  return scheme_code_bytes(s, n, k) + 4 * scheme_scale_count(s, n, k);
}

namespace detail {

inline std::vector<std::uint8_t> pack_signed_codes(const std::vector<std::int32_t>& q, int bits) {
  if (bits == 4) {
    std::vector<std::uint8_t> nibbles(q.size());
    for (std::size_t i = 0; i < q.size(); ++i) nibbles[i] = int4_to_nibble(q[i]);
    return pack_int4(nibbles);
  }
  std::vector<std::uint8_t> bytes(q.size());
  for (std::size_t i = 0; i < q.size(); ++i) bytes[i] = static_cast<std::uint8_t>(static_cast<std::int8_t>(q[i]));
  return bytes;
}

inline std::vector<std::int32_t> unpack_signed_codes(const std::vector<std::uint8_t>& bytes, int bits,
                                                     std::size_t count) {
  std::vector<std::int32_t> q(count);
  if (bits == 4) {
    const auto nibbles = unpack_int4(bytes, count);
    for (std::size_t i = 0; i < count; ++i) q[i] = nibble_to_int4(nibbles[i]);
  } else {
    if (bytes.size() < count) throw BoundsError("int8 code payload is truncated");
    for (std::size_t i = 0; i < count; ++i) q[i] = static_cast<std::int8_t>(bytes[i]);
  }
  return q;
}

inline Fp8CastTensor weight_as_fp8(const QuantizedTensor& qt) {
  Fp8CastTensor t;
  t.shape = qt.logical_shape;
  t.codes = qt.codes;
  t.scales = qt.qparams.scales;
  t.scaled_axis = qt.qparams.scales.size() == 1 ? ScaleAxis::kTensor : ScaleAxis::kRow;
  t.format = &formats::e4m3();
  return t;
}

/// Transposed view of an [N,K] per-row FP8 weight as a [K,N] per-column GEMM operand.
inline Fp8CastTensor weight_as_fp8_rhs(const QuantizedTensor& qt) {
  const std::size_t n = qt.rows();
  const std::size_t k = qt.cols();
  Fp8CastTensor t;
  t.shape = {k, n};
  t.codes.resize(n * k);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < k; ++c) t.codes[c * n + r] = qt.codes[r * k + c];
  }
  t.scales = qt.qparams.scales;
  t.scaled_axis = qt.qparams.scales.size() == 1 ? ScaleAxis::kTensor : ScaleAxis::kColumn;
  t.format = &formats::e4m3();
  return t;
}

}  // namespace detail

/// Quantizes one [N, K] weight. `name` only feeds error messages.
inline QuantizedTensor quantize_weight(const DenseTensor& w, const QuantScheme& scheme,
                                       const std::string& name = "weight") {
  if (w.rank() != 2) {
    throw ConfigError("tensor '" + name + "' must be 2-D [N,K] to quantize, got " + shape_str(w.shape()));
  }
  const std::size_t k = w.dim(1);
  if (scheme.uses_groups() && (scheme.group_size == 0 || k % scheme.group_size != 0)) {
    throw ConfigError("group size " + std::to_string(scheme.group_size) + " does not divide K=" +
                      std::to_string(k) + " of tensor '" + name + "'");
  }
  QuantizedTensor qt;
  qt.logical_shape = w.shape();
  qt.scheme = scheme;
  using Kind = QuantScheme::Kind;
  switch (scheme.kind) {
    case Kind::kInt4WeightOnly:
    case Kind::kInt8DynamicActivationInt4Weight: {
      qt.qparams = choose_qparams(w, Granularity::per_group(scheme.group_size), 4, true);
      qt.codes = detail::pack_signed_codes(quantize_affine(w, qt.qparams), 4);
      break;
    }
    case Kind::kInt8WeightOnly: {
      qt.qparams = choose_qparams(w, Granularity::per_axis(0), 8, true);
      qt.codes = detail::pack_signed_codes(quantize_affine(w, qt.qparams), 8);
      break;
    }
    case Kind::kFloat8WeightOnly:
    case Kind::kFloat8DynamicActivationFloat8Weight: {
      const bool per_tensor = scheme.kind == Kind::kFloat8DynamicActivationFloat8Weight &&
                              scheme.fp8_granularity == Fp8Granularity::kPerTensor;
      const Fp8CastTensor c =
          cast_fp8(w, per_tensor ? ScaleAxis::kTensor : ScaleAxis::kRow, formats::e4m3());
      qt.codes = c.codes;
      qt.qparams.granularity = per_tensor ? Granularity::per_tensor() : Granularity::per_axis(0);
      qt.qparams.scales = c.scales;
      qt.qparams.zero_points.assign(c.scales.size(), 0);
      qt.qparams.target_bits = 8;
      break;
    }
    case Kind::kNf4WeightOnly: {
      const std::size_t b = scheme.group_size;
      const std::size_t blocks = w.numel() / b;
      std::vector<std::uint8_t> nib(w.numel());
      qt.qparams.granularity = Granularity::per_group(b);
      qt.qparams.scales.resize(blocks);
      qt.qparams.zero_points.assign(blocks, 0);
      qt.qparams.target_bits = 4;
      for (std::size_t blk = 0; blk < blocks; ++blk) {
        const auto block = w.data().subspan(blk * b, b);
        const float absmax = amax(block);
        qt.qparams.scales[blk] = absmax;
        for (std::size_t i = 0; i < b; ++i) {
          nib[blk * b + i] = nf4_encode(absmax == 0.0F ? 0.0F : block[i] / absmax);
        }
      }
      qt.codes = pack_int4(nib);
      break;
    }
  }
  return qt;
}

inline std::map<std::string, QuantizedTensor> quantize_model_weights(
    const std::map<std::string, DenseTensor>& weights, const QuantScheme& scheme) {
  std::map<std::string, QuantizedTensor> out;
  for (const auto& [name, w] : weights) out.emplace(name, quantize_weight(w, scheme, name));
  return out;
}

inline DenseTensor dequantize_tensor(const QuantizedTensor& qt) {
  if (qt.logical_shape.size() != 2) throw ShapeError("quantized tensor must be 2-D");
  const std::size_t n = qt.rows();
  const std::size_t k = qt.cols();
  if (qt.codes.size() != scheme_code_bytes(qt.scheme, n, k)) {
    throw FormatError("corrupt packing: " + std::to_string(qt.codes.size()) + " code bytes, expected " +
                      std::to_string(scheme_code_bytes(qt.scheme, n, k)) + " for " +
                      qt.scheme.to_string() + " " + shape_str(qt.logical_shape));
  }
  if (qt.qparams.scales.size() != scheme_scale_count(qt.scheme, n, k)) {
    throw FormatError("corrupt qparams: " + std::to_string(qt.qparams.scales.size()) + " scales, expected " +
                      std::to_string(scheme_scale_count(qt.scheme, n, k)));
  }
  using Kind = QuantScheme::Kind;
  switch (qt.scheme.kind) {
    case Kind::kInt4WeightOnly:
    case Kind::kInt8DynamicActivationInt4Weight:
    case Kind::kInt8WeightOnly: {
      const int bits = qt.scheme.weight_bits();
      return dequantize_affine(detail::unpack_signed_codes(qt.codes, bits, n * k), qt.logical_shape,
                               qt.qparams);
    }
    case Kind::kFloat8WeightOnly:
    case Kind::kFloat8DynamicActivationFloat8Weight:
      return fp8_dequantize(detail::weight_as_fp8(qt));
    case Kind::kNf4WeightOnly: {
      const auto nib = unpack_int4(qt.codes, n * k);
      DenseTensor out(qt.logical_shape);
      const std::size_t b = qt.scheme.group_size;
      for (std::size_t i = 0; i < n * k; ++i) out[i] = nf4_decode(nib[i]) * qt.qparams.scales[i / b];
      return out;
    }
  }
  return {};
}

/// Per-token asymmetric int8 quantize-dequantize of activations (the 8da4w
/// activation path).
inline DenseTensor fake_quant_activation_int8_per_token(const DenseTensor& x) {
  const TokenQuantized q = dynamic_quant_per_token(x, 8, /*symmetric=*/false);
  return dequantize_affine(q.codes, x.shape(), q.qparams);
}

/// y[M,N] = x[M,K] . w[N,K]^T (+ bias), dispatched on the weight's scheme.
///
/// Weight-only schemes dequantize the weight and run gemm_ref. Dynamic
/// activation schemes first quantize x (int8 per-token asymmetric, or FP8
/// per-row / per-tensor E4M3) and run the emulated GEMM on the dequantized
/// operands, so the result equals the reference composition bit for bit.
inline DenseTensor qlinear(const DenseTensor& x, const QuantizedTensor& w,
                           const std::optional<DenseTensor>& bias = std::nullopt) {
  require_matrix(x, "qlinear input");
  if (x.dim(1) != w.cols()) {
    throw ShapeError("qlinear input " + shape_str(x.shape()) + " does not match weight " +
                     shape_str(w.logical_shape) + " (" + w.scheme.to_string() + ")");
  }
  DenseTensor y;
  using Kind = QuantScheme::Kind;
  switch (w.scheme.kind) {
    case Kind::kInt8DynamicActivationInt4Weight:
      y = gemm_ref(fake_quant_activation_int8_per_token(x), transpose(dequantize_tensor(w)));
      break;
    case Kind::kFloat8DynamicActivationFloat8Weight: {
      const ScaleAxis axis =
          w.scheme.fp8_granularity == Fp8Granularity::kPerRow ? ScaleAxis::kRow : ScaleAxis::kTensor;
      y = scaled_gemm(cast_fp8(x, axis, formats::e4m3()), detail::weight_as_fp8_rhs(w));
      break;
    }
    default:
      y = gemm_ref(x, transpose(dequantize_tensor(w)));
      break;
  }
  return bias ? add_bias(y, *bias) : y;
}

}  // namespace lpkit
