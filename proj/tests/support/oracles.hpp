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

// Brute-force reference implementations. Each one searches the whole candidate
// set instead of reusing library arithmetic.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "lpkit/lpkit.hpp"

namespace lpkit::oracle {

/// Nearest non-NaN, non-infinite code by exhaustive search. Ties go to the
/// code with an even least-significant bit; +0/-0 follow the sign of x.
inline std::uint32_t nearest_code(double x, const FloatFormat& fmt) {
  std::uint32_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  bool have = false;
  for (std::uint32_t c = 0; c < fmt.code_count(); ++c) {
    const double v = decode_float(c, fmt);
    if (!std::isfinite(v)) continue;
    if (v == 0.0 && std::signbit(v) != std::signbit(x)) continue;
    const double d = std::fabs(x - v);
    if (!have || d < best_d || (d == best_d && (best & 1U) != 0U && (c & 1U) == 0U)) {
      best = c;
      best_d = d;
      have = true;
    }
  }
  return best;
}

/// Nearest NF4 level by exhaustive search; ties to the lower index.
inline std::uint8_t nearest_nf4(float x) {
  const auto& lv = Nf4Codebook::instance().levels();
  std::uint8_t best = 0;
  double best_d = std::fabs(double(x) - lv[0]);
  for (std::uint8_t i = 1; i < 16; ++i) {
    const double d = std::fabs(double(x) - lv[i]);
    if (d < best_d) {
      best = i;
      best_d = d;
    }
  }
  return best;
}

/// Code in [qmin, qmax] whose dequantized value is nearest to x.
inline std::int32_t nearest_affine_code(float x, float scale, std::int32_t zp, std::int32_t qmin, std::int32_t qmax) {
  std::int32_t best = qmin;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::int32_t q = qmin; q <= qmax; ++q) {
    const double d = std::fabs(double(x) - double(q - zp) * double(scale));
    if (d < best_d) {
      best = q;
      best_d = d;
    }
  }
  return best;
}

/// Best squared-magnitude mass any of the six 2-of-4 keep patterns retains.
inline double best_2of4_kept_energy(const std::array<float, 4>& g) {
  double best = -1.0;
  for (int a = 0; a < 4; ++a) {
    for (int b = a + 1; b < 4; ++b) {
      best = std::max(best, double(g[a]) * g[a] + double(g[b]) * g[b]);
    }
  }
  return best;
}

/// Textbook triple loop, double accumulation, k ascending.
inline DenseTensor naive_gemm(const DenseTensor& a, const DenseTensor& b) {
  DenseTensor c({a.dim(0), b.dim(1)});
  for (std::size_t i = 0; i < a.dim(0); ++i) {
    for (std::size_t j = 0; j < b.dim(1); ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.dim(1); ++k) acc += double(a.at(i, k)) * double(b.at(k, j));
      c.at(i, j) = static_cast<float>(acc);
    }
  }
  return c;
}

/// Random real that stresses a format: log-uniform magnitudes across and
/// beyond its range, exact midpoints between neighbouring codes, and values
/// just either side of them.
inline float stress_value(const FloatFormat& fmt, SplitMix64& rng) {
  const int kind = static_cast<int>(rng.below(4));
  const double sign = (fmt.sign_bits > 0 && rng.below(2) == 1) ? -1.0 : 1.0;
  const double lo = fmt.exponent_only() ? std::ldexp(1.0, -fmt.bias - 2)
                                         : std::ldexp(1.0, 1 - fmt.bias - fmt.mantissa_bits - 2);
  const double hi = std::min(double(fmt.max_finite) * 4.0, double(std::numeric_limits<float>::max()));
  if (kind == 0) {
    return static_cast<float>(sign * std::exp(rng.uniform(std::log(lo), std::log(hi))));
  }
  // Midpoint between two adjacent non-negative finite codes.
  std::vector<double> vals;
  for (std::uint32_t c = 0; c < fmt.code_count(); ++c) {
    const double v = decode_float(c, fmt);
    if (std::isfinite(v) && !std::signbit(v)) vals.push_back(v);
  }
  std::sort(vals.begin(), vals.end());
  vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
  const std::size_t i = rng.below(vals.size() - 1);
  const auto mid = static_cast<float>((vals[i] + vals[i + 1]) / 2.0);
  const float v = kind == 1 ? mid : kind == 2 ? std::nextafter(mid, 0.0F) : std::nextafter(mid, std::numeric_limits<float>::infinity());
  return static_cast<float>(sign * v);
}

}  // namespace lpkit::oracle
