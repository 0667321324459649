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
#include <atomic>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "lpkit/errors.hpp"

namespace lpkit {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

/// Row-major contiguous float32 tensor. Owns its storage; copies are deep.
class DenseTensor {
 public:
  DenseTensor() = default;

  explicit DenseTensor(Shape shape) : shape_(std::move(shape)), data_(shape_numel(shape_), 0.0F) {}

  DenseTensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_numel(shape_)) {
      throw ShapeError("tensor data has " + std::to_string(data_.size()) +
                       " elements but shape " + shape_str(shape_) + " needs " +
                       std::to_string(shape_numel(shape_)));
    }
  }

  static DenseTensor zeros(Shape shape) { return DenseTensor(std::move(shape)); }

  static DenseTensor filled(Shape shape, float value) {
    DenseTensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }

  static DenseTensor identity(std::size_t n) {
    DenseTensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0F;
    return t;
  }

  [[nodiscard]] const Shape& shape() const { return shape_; }
  [[nodiscard]] std::size_t rank() const { return shape_.size(); }
  [[nodiscard]] std::size_t numel() const { return data_.size(); }
  [[nodiscard]] std::size_t dim(std::size_t i) const { return shape_.at(i); }

  /// Leading dimensions flattened; 1 for a vector.
  [[nodiscard]] std::size_t rows() const {
    if (shape_.empty()) return 1;
    return numel() / shape_.back();
  }
  [[nodiscard]] std::size_t cols() const { return shape_.empty() ? 1 : shape_.back(); }

  [[nodiscard]] std::span<float> data() { return data_; }
  [[nodiscard]] std::span<const float> data() const { return data_; }
  [[nodiscard]] const std::vector<float>& values() const { return data_; }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  float& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  [[nodiscard]] float at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  [[nodiscard]] std::span<const float> row(std::size_t r) const {
    return std::span<const float>(data_).subspan(r * cols(), cols());
  }

  /// Bitwise equality including shape (distinguishes +0/-0 and NaN payloads).
  [[nodiscard]] bool bit_equal(const DenseTensor& other) const {
    if (shape_ != other.shape_) return false;
    return std::equal(data_.begin(), data_.end(), other.data_.begin(), [](float a, float b) {
      return std::bit_cast<std::uint32_t>(a) == std::bit_cast<std::uint32_t>(b);
    });
  }

 private:
  Shape shape_;
  std::vector<float> data_;
};

inline void require_matrix(const DenseTensor& t, const char* what) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(what) + " must be 2-D, got shape " + shape_str(t.shape()));
  }
}

inline DenseTensor transpose(const DenseTensor& t) {
  require_matrix(t, "transpose input");
  const std::size_t r = t.dim(0);
  const std::size_t c = t.dim(1);
  DenseTensor out({c, r});
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out.at(j, i) = t.at(i, j);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Threading. Work is split by output rows only, so per-element accumulation
// order never depends on the thread count.

namespace detail {
inline std::atomic<unsigned>& thread_count_slot() {
  static std::atomic<unsigned> n{1};
  return n;
}
}  // namespace detail

inline void set_num_threads(unsigned n) { detail::thread_count_slot() = std::max(1U, n); }
inline unsigned num_threads() { return detail::thread_count_slot(); }

template <typename RowFn>
void parallel_rows(std::size_t rows, RowFn&& fn) {
  const unsigned n = std::min<std::size_t>(num_threads(), std::max<std::size_t>(rows, 1));
  if (n <= 1) {
    for (std::size_t r = 0; r < rows; ++r) fn(r);
    return;
  }
  std::vector<std::jthread> workers;
  workers.reserve(n);
  const std::size_t chunk = (rows + n - 1) / n;
  for (unsigned t = 0; t < n; ++t) {
    const std::size_t begin = t * chunk;
    const std::size_t end = std::min(rows, begin + chunk);
    if (begin >= end) break;
    workers.emplace_back([&fn, begin, end] {
      for (std::size_t r = begin; r < end; ++r) fn(r);
    });
  }
}

/// Reference GEMM: c[m,n] = sum_k a[m,k] * b[k,n], accumulated in double with
/// k ascending and rounded to float once per output element.
inline DenseTensor gemm_ref(const DenseTensor& a, const DenseTensor& b) {
  require_matrix(a, "gemm lhs");
  require_matrix(b, "gemm rhs");
  const std::size_t m = a.dim(0);
  const std::size_t k = a.dim(1);
  const std::size_t n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("gemm inner dimensions disagree: " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  DenseTensor c({m, n});
  const float* pa = a.data().data();
  const float* pb = b.data().data();
  float* pc = c.data().data();
  parallel_rows(m, [&](std::size_t i) {
    std::vector<double> acc(n, 0.0);
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = pa[i * k + kk];
      const float* brow = pb + kk * n;
      for (std::size_t j = 0; j < n; ++j) acc[j] += av * static_cast<double>(brow[j]);
    }
    for (std::size_t j = 0; j < n; ++j) pc[i * n + j] = static_cast<float>(acc[j]);
  });
  return c;
}

/// out[m, n] += bias[n], in float.
inline DenseTensor add_bias(const DenseTensor& x, const DenseTensor& bias) {
  require_matrix(x, "add_bias input");
  if (bias.rank() != 1 || bias.dim(0) != x.dim(1)) {
    throw ShapeError("bias shape " + shape_str(bias.shape()) + " does not match " +
                     shape_str(x.shape()));
  }
  DenseTensor out = x;
  for (std::size_t r = 0; r < x.dim(0); ++r) {
    for (std::size_t c = 0; c < x.dim(1); ++c) out.at(r, c) += bias[c];
  }
  return out;
}

}  // namespace lpkit
