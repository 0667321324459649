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

// Microscaling block formats: each block of `block_size` contiguous elements
// along the innermost dimension shares one E8M0 power-of-two scale.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "lpkit/errors.hpp"
#include "lpkit/lp_dtypes.hpp"
#include "lpkit/tensor.hpp"

namespace lpkit {

inline constexpr std::size_t kMxDefaultBlock = 32;

enum class MxElement { kFp4E2M1, kFp6E2M3, kFp8E4M3 };

inline const FloatFormat& mx_element_format(MxElement e) {
  switch (e) {
    case MxElement::kFp4E2M1: return formats::e2m1();
    case MxElement::kFp6E2M3: return formats::e2m3();
    case MxElement::kFp8E4M3: return formats::e4m3();
  }
  return formats::e4m3();
}

inline std::string mx_element_name(MxElement e) { return mx_element_format(e).name; }

inline MxElement parse_mx_element(std::string_view s) {
  if (s == "E2M1" || s == "mxfp4") return MxElement::kFp4E2M1;
  if (s == "E2M3" || s == "mxfp6") return MxElement::kFp6E2M3;
  if (s == "E4M3" || s == "mxfp8") return MxElement::kFp8E4M3;
  throw ConfigError("unknown MX element format '" + std::string(s) + "'");
}

/// E2M1 elements are nibble-packed (two per byte); FP6 and FP8 elements take
/// one byte each.
struct MxBlockTensor {
  Shape logical_shape;
  MxElement elem = MxElement::kFp8E4M3;
  std::size_t block_size = kMxDefaultBlock;
  std::vector<std::uint8_t> scale_codes;  // E8M0, one per block
  std::vector<std::uint8_t> elem_codes;

  [[nodiscard]] std::size_t numel() const { return shape_numel(logical_shape); }
  [[nodiscard]] std::size_t block_count() const { return numel() / block_size; }
  [[nodiscard]] bool packed() const { return elem == MxElement::kFp4E2M1; }

  [[nodiscard]] std::uint8_t elem_code(std::size_t i) const {
    if (packed()) return static_cast<std::uint8_t>((elem_codes[i / 2] >> ((i % 2) * 4)) & 0xF);
    return elem_codes[i];
  }
  /// Decoded block scale, 2^e.
  [[nodiscard]] float block_scale(std::size_t b) const {
    return decode_float(scale_codes[b], formats::e8m0());
  }
};

/// Shared exponent of a block: floor(log2(amax)) - emax(element), clamped to
/// the E8M0 range. Returns the unbiased exponent.
inline int mx_shared_exponent(float block_amax, const FloatFormat& elem_fmt) {
  const FloatFormat& scale_fmt = formats::e8m0();
  const int lo = -scale_fmt.bias;
  const int hi = static_cast<int>(scale_fmt.max_finite_code) - scale_fmt.bias;
  if (block_amax == 0.0F) return lo;
  const int e = std::ilogb(block_amax) - elem_fmt.emax();
  return std::clamp(e, lo, hi);
}

inline MxBlockTensor mx_quantize(const DenseTensor& x, MxElement elem,
                                 std::size_t block_size = kMxDefaultBlock) {
  if (x.rank() == 0 || block_size == 0 || x.cols() % block_size != 0) {
    throw ConfigError("MX block size " + std::to_string(block_size) +
                      " does not divide the innermost dimension of " + shape_str(x.shape()));
  }
  const FloatFormat& fmt = mx_element_format(elem);
  MxBlockTensor t;
  t.logical_shape = x.shape();
  t.elem = elem;
  t.block_size = block_size;
  const std::size_t blocks = x.numel() / block_size;
  t.scale_codes.resize(blocks);
  std::vector<std::uint8_t> codes(x.numel());
  for (std::size_t b = 0; b < blocks; ++b) {
    const auto block = x.data().subspan(b * block_size, block_size);
    float block_amax = 0.0F;
    for (float v : block) {
      if (!std::isfinite(v)) throw ConfigError("mx_quantize: non-finite input");
      block_amax = std::max(block_amax, std::fabs(v));
    }
    const int e = mx_shared_exponent(block_amax, fmt);
    t.scale_codes[b] = static_cast<std::uint8_t>(e + formats::e8m0().bias);
    for (std::size_t i = 0; i < block_size; ++i) {
      const float scaled = block_amax == 0.0F ? 0.0F : std::ldexp(block[i], -e);
      codes[b * block_size + i] = static_cast<std::uint8_t>(encode_float(scaled, fmt).bits);
    }
  }
  t.elem_codes = t.packed() ? pack_int4(codes) : std::move(codes);
  return t;
}

inline DenseTensor mx_dequantize(const MxBlockTensor& t) {
  const FloatFormat& fmt = mx_element_format(t.elem);
  DenseTensor out(t.logical_shape);
  for (std::size_t b = 0; b < t.block_count(); ++b) {
    const int e = static_cast<int>(t.scale_codes[b]) - formats::e8m0().bias;
    for (std::size_t i = 0; i < t.block_size; ++i) {
      const std::size_t idx = b * t.block_size + i;
      out[idx] = std::ldexp(decode_float(t.elem_code(idx), fmt), e);
    }
  }
  return out;
}

/// Emulated MX GEMM: gemm_ref over the dequantized operands.
inline DenseTensor mx_gemm(const MxBlockTensor& a, const MxBlockTensor& b) {
  return gemm_ref(mx_dequantize(a), mx_dequantize(b));
}

}  // namespace lpkit
