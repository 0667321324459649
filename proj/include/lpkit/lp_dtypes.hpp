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

// Bit-exact codecs for the low-precision scalar formats: FP8 (E4M3, E5M2),
// FP6 (E3M2, E2M3), FP4 (E2M1), the E8M0 block-scale type, NF4, and int4
// nibble packing.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <boost/math/distributions/normal.hpp>

#include "lpkit/errors.hpp"

namespace lpkit {

enum class OverflowPolicy { kSaturate, kToNan };

/// Parametric description of a sign/exponent/mantissa encoding of at most 8 bits.
///
/// Exponent-only formats (E8M0) have no sign bit and no zero; every other
/// format is sign-magnitude with subnormals. `nan_codes` lists every code that
/// decodes to NaN; the first entry is the canonical NaN produced by encode.
struct FloatFormat {
  std::string name;
  int sign_bits = 1;
  int exponent_bits = 0;
  int mantissa_bits = 0;
  int bias = 0;
  bool has_infinity = false;
  std::vector<std::uint32_t> nan_codes;
  float max_finite = 0.0F;
  std::uint32_t max_finite_code = 0;
  bool supports_subnormals = true;
  OverflowPolicy overflow_policy = OverflowPolicy::kSaturate;

  [[nodiscard]] int total_bits() const { return sign_bits + exponent_bits + mantissa_bits; }
  [[nodiscard]] std::uint32_t code_count() const { return 1U << total_bits(); }
  [[nodiscard]] bool exponent_only() const { return mantissa_bits == 0 && sign_bits == 0; }
  [[nodiscard]] bool has_nan() const { return !nan_codes.empty(); }
  [[nodiscard]] std::uint32_t canonical_nan() const {
    if (nan_codes.empty()) throw FormatError(name + " has no NaN encoding");
    return nan_codes.front();
  }
  [[nodiscard]] bool is_nan_code(std::uint32_t code) const {
    return std::find(nan_codes.begin(), nan_codes.end(), code) != nan_codes.end();
  }
  /// Largest unbiased exponent of a finite value: floor(log2(max_finite)).
  [[nodiscard]] int emax() const { return std::ilogb(max_finite); }

  [[nodiscard]] FloatFormat with_policy(OverflowPolicy policy) const {
    if (policy == OverflowPolicy::kToNan && !has_nan()) {
      throw FormatError(name + " cannot overflow to NaN: format has no NaN code");
    }
    FloatFormat copy = *this;
    copy.overflow_policy = policy;
    return copy;
  }

  friend bool operator==(const FloatFormat& a, const FloatFormat& b) {
    return a.name == b.name && a.sign_bits == b.sign_bits && a.exponent_bits == b.exponent_bits &&
           a.mantissa_bits == b.mantissa_bits && a.bias == b.bias &&
           a.overflow_policy == b.overflow_policy;
  }
};

/// A stored code together with the format that interprets it.
struct CodePoint {
  std::uint32_t bits = 0;
  const FloatFormat* format = nullptr;
};

namespace detail {

inline float decode_bits(std::uint32_t bits, const FloatFormat& fmt) {
  if (fmt.is_nan_code(bits)) {
    const bool negative = fmt.sign_bits > 0 && ((bits >> (fmt.exponent_bits + fmt.mantissa_bits)) & 1U) != 0U;
    return std::copysign(std::numeric_limits<float>::quiet_NaN(), negative ? -1.0F : 1.0F);
  }
  if (fmt.exponent_only()) {
    return std::ldexp(1.0F, static_cast<int>(bits) - fmt.bias);
  }
  const int m = fmt.mantissa_bits;
  const std::uint32_t mag_bits = fmt.exponent_bits + m;
  const bool negative = ((bits >> mag_bits) & 1U) != 0U;
  const std::uint32_t exp_field = (bits >> m) & ((1U << fmt.exponent_bits) - 1U);
  const std::uint32_t mant = bits & ((1U << m) - 1U);
  float magnitude = 0.0F;
  if (fmt.has_infinity && exp_field == (1U << fmt.exponent_bits) - 1U && mant == 0U) {
    magnitude = std::numeric_limits<float>::infinity();
  } else if (exp_field == 0U) {
    magnitude = std::ldexp(static_cast<float>(mant), 1 - fmt.bias - m);
  } else {
    magnitude = std::ldexp(static_cast<float>((1U << m) + mant),
                           static_cast<int>(exp_field) - fmt.bias - m);
  }
  return negative ? -magnitude : magnitude;
}

inline FloatFormat make_format(std::string name, int sign_bits, int e, int m, int bias, bool inf,
                               std::vector<std::uint32_t> nans) {
  FloatFormat f;
  f.name = std::move(name);
  f.sign_bits = sign_bits;
  f.exponent_bits = e;
  f.mantissa_bits = m;
  f.bias = bias;
  f.has_infinity = inf;
  f.nan_codes = std::move(nans);
  float best = 0.0F;
  for (std::uint32_t c = 0; c < f.code_count(); ++c) {
    const float v = decode_bits(c, f);
    if (std::isfinite(v) && v > best) {
      best = v;
      f.max_finite_code = c;
    }
  }
  f.max_finite = best;
  return f;
}

}  // namespace detail

namespace formats {

/// E4M3 "FN": no infinities, NaN at S.1111.111, max 448.
inline const FloatFormat& e4m3() {
  static const FloatFormat f = detail::make_format("E4M3", 1, 4, 3, 7, false, {0x7F, 0xFF});
  return f;
}

/// IEEE-style E5M2: infinities at S.11111.00, NaNs at S.11111.{01,10,11}, max 57344.
inline const FloatFormat& e5m2() {
  static const FloatFormat f =
      detail::make_format("E5M2", 1, 5, 2, 15, true, {0x7F, 0x7D, 0x7E, 0xFD, 0xFE, 0xFF});
  return f;
}

inline const FloatFormat& e3m2() {
  static const FloatFormat f = detail::make_format("E3M2", 1, 3, 2, 3, false, {});
  return f;
}

inline const FloatFormat& e2m3() {
  static const FloatFormat f = detail::make_format("E2M3", 1, 2, 3, 1, false, {});
  return f;
}

inline const FloatFormat& e2m1() {
  static const FloatFormat f = detail::make_format("E2M1", 1, 2, 1, 1, false, {});
  return f;
}

/// Unsigned exponent-only scale: code c in [0, 254] is 2^(c - 127), 255 is NaN.
inline const FloatFormat& e8m0() {
  static const FloatFormat f = detail::make_format("E8M0", 0, 8, 0, 127, false, {0xFF});
  return f;
}

inline std::span<const FloatFormat* const> all() {
  static const std::array<const FloatFormat*, 6> registry = {&e4m3(), &e5m2(), &e3m2(),
                                                             &e2m3(), &e2m1(), &e8m0()};
  return registry;
}

inline const FloatFormat& by_name(std::string_view name) {
  for (const FloatFormat* f : all()) {
    if (f->name == name) return *f;
  }
  throw FormatError("unknown float format '" + std::string(name) + "'");
}

}  // namespace formats

inline float decode_float(CodePoint code) {
  if (code.format == nullptr) throw FormatError("code point without a format");
  if (code.bits >= code.format->code_count()) {
    throw FormatError("code " + std::to_string(code.bits) + " does not fit " +
                      std::to_string(code.format->total_bits()) + "-bit format " +
                      code.format->name);
  }
  return detail::decode_bits(code.bits, *code.format);
}

inline float decode_float(std::uint32_t bits, const FloatFormat& fmt) {
  return decode_float(CodePoint{bits, &fmt});
}

namespace detail {

inline std::uint32_t overflow_code(const FloatFormat& fmt, bool negative, std::uint32_t max_code) {
  if (fmt.overflow_policy == OverflowPolicy::kToNan) return fmt.canonical_nan();
  const std::uint32_t sign = negative ? (1U << (fmt.exponent_bits + fmt.mantissa_bits)) : 0U;
  return sign | max_code;
}

inline std::uint32_t encode_exponent_only(float x, const FloatFormat& fmt) {
  const int max_exp = static_cast<int>(fmt.max_finite_code) - fmt.bias;
  const int min_exp = -fmt.bias;
  if (!(x > std::ldexp(1.0F, min_exp))) return 0U;  // includes zero and negatives: nearest is the minimum
  if (std::isinf(x)) {
    return fmt.overflow_policy == OverflowPolicy::kToNan ? fmt.canonical_nan() : fmt.max_finite_code;
  }
  int e2 = 0;
  std::frexp(static_cast<double>(x), &e2);
  const int lo = e2 - 1;  // x in [2^lo, 2^(lo+1))
  const double lower = std::ldexp(1.0, lo);
  const double upper = std::ldexp(1.0, lo + 1);
  const double xd = x;
  int chosen = lo;
  if (xd - lower > upper - xd) {
    chosen = lo + 1;
  } else if (xd - lower == upper - xd) {
    chosen = ((lo + fmt.bias) % 2 == 0) ? lo : lo + 1;
  }
  if (chosen > max_exp) {
    if (fmt.overflow_policy == OverflowPolicy::kToNan) return fmt.canonical_nan();
    chosen = max_exp;
  }
  return static_cast<std::uint32_t>(chosen + fmt.bias);
}

}  // namespace detail

/// Round-to-nearest-even encode; ties go to the even mantissa.
///
/// Magnitudes above max_finite (after rounding) follow the format's overflow
/// policy. Infinite inputs map to the infinity code where one exists. NaN maps
/// to the canonical NaN of the same sign; formats without a NaN code reject NaN
/// input.
inline CodePoint encode_float(float x, const FloatFormat& fmt) {
  if (std::isnan(x)) {
    if (!fmt.has_nan()) throw FormatError("NaN is not representable in " + fmt.name);
    // A negative NaN keeps its sign when the mirrored canonical code is also NaN.
    if (std::signbit(x) && fmt.sign_bits > 0) {
      const std::uint32_t mirrored = fmt.canonical_nan() | (1U << (fmt.exponent_bits + fmt.mantissa_bits));
      if (fmt.is_nan_code(mirrored)) return {mirrored, &fmt};
    }
    return {fmt.canonical_nan(), &fmt};
  }
  if (fmt.exponent_only()) return {detail::encode_exponent_only(x, fmt), &fmt};

  const int m = fmt.mantissa_bits;
  const bool negative = std::signbit(x);
  const std::uint32_t sign = negative ? (1U << (fmt.exponent_bits + m)) : 0U;
  const std::uint32_t max_code = fmt.max_finite_code;
  const double a = std::fabs(static_cast<double>(x));

  if (std::isinf(a)) {
    if (fmt.has_infinity) {
      return {sign | (((1U << fmt.exponent_bits) - 1U) << m), &fmt};
    }
    return {detail::overflow_code(fmt, negative, max_code), &fmt};
  }
  if (a == 0.0) return {sign, &fmt};

  const int min_normal_exp = 1 - fmt.bias;
  std::uint32_t mag = 0;
  double rounded = 0.0;
  if (a < std::ldexp(1.0, min_normal_exp)) {
    const int quantum_exp = min_normal_exp - m;
    const double r = std::nearbyint(std::ldexp(a, -quantum_exp));
    rounded = std::ldexp(r, quantum_exp);
    mag = static_cast<std::uint32_t>(r);  // r == 2^m lands on the minimum normal code
  } else {
    int e2 = 0;
    std::frexp(a, &e2);
    const int unbiased = e2 - 1;
    const int quantum_exp = unbiased - m;
    const double r = std::nearbyint(std::ldexp(a, -quantum_exp));
    rounded = std::ldexp(r, quantum_exp);
    // code = (E << m) + (r - 2^m) with E = unbiased + bias; r == 2^(m+1) carries into E.
    mag = (static_cast<std::uint32_t>(unbiased + fmt.bias - 1) << m) + static_cast<std::uint32_t>(r);
  }
  if (rounded > static_cast<double>(fmt.max_finite)) {
    return {detail::overflow_code(fmt, negative, max_code), &fmt};
  }
  return {sign | mag, &fmt};
}

/// Encode then decode: the nearest representable value under the format's rules.
inline float round_to_format(float x, const FloatFormat& fmt) {
  return decode_float(encode_float(x, fmt));
}

// ---------------------------------------------------------------------------
// NF4

/// The 16-level normal-float codebook.
///
/// Eight positive levels are standard-normal quantiles at evenly spaced
/// probabilities in [0.5, offset], seven negative levels mirror that
/// construction with one fewer bin, and the halves meet at an exact zero.
/// Levels are normalised so the endpoints are exactly -1 and +1.
class Nf4Codebook {
 public:
  static constexpr double kOffset = 0.9677083;
  static constexpr std::size_t kLevels = 16;

  static const Nf4Codebook& instance() {
    static const Nf4Codebook book;
    return book;
  }

  [[nodiscard]] const std::array<float, kLevels>& levels() const { return levels_; }
  [[nodiscard]] std::size_t zero_index() const { return zero_index_; }

 private:
  Nf4Codebook() {
    const boost::math::normal_distribution<double> normal;
    std::vector<double> values;
    // Positive half: 9 evenly spaced probabilities from offset down to 0.5, last dropped.
    for (int i = 0; i < 8; ++i) {
      const double p = kOffset + (0.5 - kOffset) * i / 8.0;
      values.push_back(boost::math::quantile(normal, p));
    }
    // Negative half: 8 evenly spaced probabilities, last dropped.
    for (int i = 0; i < 7; ++i) {
      const double p = kOffset + (0.5 - kOffset) * i / 7.0;
      values.push_back(-boost::math::quantile(normal, p));
    }
    values.push_back(0.0);
    std::sort(values.begin(), values.end());
    const double top = values.back();
    for (std::size_t i = 0; i < kLevels; ++i) {
      levels_[i] = static_cast<float>(values[i] / top);
      if (values[i] == 0.0) zero_index_ = i;
    }
  }

  std::array<float, kLevels> levels_{};
  std::size_t zero_index_ = 0;
};

/// Index of the nearest codebook level; ties go to the lower index.
inline std::uint8_t nf4_encode(float x) {
  if (std::isnan(x)) throw FormatError("NaN is not representable in NF4");
  const auto& levels = Nf4Codebook::instance().levels();
  std::uint8_t best = 0;
  float best_dist = std::fabs(x - levels[0]);
  for (std::uint8_t i = 1; i < levels.size(); ++i) {
    const float d = std::fabs(x - levels[i]);
    if (d < best_dist) {
      best_dist = d;
      best = i;
    }
  }
  return best;
}

inline float nf4_decode(std::uint32_t code) {
  if (code >= Nf4Codebook::kLevels) {
    throw FormatError("NF4 code " + std::to_string(code) + " is out of range [0, 16)");
  }
  return Nf4Codebook::instance().levels()[code];
}

// ---------------------------------------------------------------------------
// int4 packing

/// Packs 4-bit codes two per byte, even index in the low nibble. An odd
/// trailing element is padded with a zero high nibble.
inline std::vector<std::uint8_t> pack_int4(std::span<const std::uint8_t> codes) {
  std::vector<std::uint8_t> out((codes.size() + 1) / 2, 0);
  for (std::size_t i = 0; i < codes.size(); ++i) {
    if (codes[i] > 0xF) {
      throw FormatError("value " + std::to_string(codes[i]) + " at index " + std::to_string(i) +
                        " is not a 4-bit code");
    }
    out[i / 2] |= static_cast<std::uint8_t>(codes[i] << ((i % 2) * 4));
  }
  return out;
}

inline std::vector<std::uint8_t> unpack_int4(std::span<const std::uint8_t> bytes, std::size_t count) {
  if (count > bytes.size() * 2) {
    throw BoundsError("cannot unpack " + std::to_string(count) + " nibbles from " +
                      std::to_string(bytes.size()) + " bytes");
  }
  std::vector<std::uint8_t> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    out[i] = static_cast<std::uint8_t>((bytes[i / 2] >> ((i % 2) * 4)) & 0xF);
  }
  return out;
}

/// Two's-complement nibble of a signed int4 value in [-8, 7].
inline std::uint8_t int4_to_nibble(int v) { return static_cast<std::uint8_t>(v & 0xF); }
inline int nibble_to_int4(std::uint8_t n) { return (n & 0x8) != 0 ? static_cast<int>(n) - 16 : n; }

}  // namespace lpkit
