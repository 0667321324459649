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
#include <limits>

#include "lpkit/errors.hpp"
#include "lpkit/tensor.hpp"

namespace lpkit {

/// Reconstruction error of `test` against `ref`. Sums are in double.
struct ErrorStats {
  double sum_sq_err = 0.0;
  double sum_sq_ref = 0.0;
  double max_abs = 0.0;
  std::size_t count = 0;

  void add(const ErrorStats& o) {
    sum_sq_err += o.sum_sq_err;
    sum_sq_ref += o.sum_sq_ref;
    max_abs = std::max(max_abs, o.max_abs);
    count += o.count;
  }
  [[nodiscard]] double mse() const { return count == 0 ? 0.0 : sum_sq_err / static_cast<double>(count); }
  /// 10 log10(signal / noise); +inf when the reconstruction is exact.
  [[nodiscard]] double sqnr_db() const {
    if (sum_sq_err == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(sum_sq_ref / sum_sq_err);
  }
};

inline ErrorStats error_stats(const DenseTensor& ref, const DenseTensor& test) {
  if (ref.shape() != test.shape()) {
    throw ShapeError("shape mismatch: " + shape_str(ref.shape()) + " vs " + shape_str(test.shape()));
  }
  ErrorStats s;
  s.count = ref.numel();
  for (std::size_t i = 0; i < ref.numel(); ++i) {
    const double r = ref[i];
    const double d = r - static_cast<double>(test[i]);
    s.sum_sq_err += d * d;
    s.sum_sq_ref += r * r;
    s.max_abs = std::max(s.max_abs, std::fabs(d));
  }
  return s;
}

inline double mse(const DenseTensor& ref, const DenseTensor& test) { return error_stats(ref, test).mse(); }

}  // namespace lpkit
