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

// 2:4 semi-structured sparsity (prune / compress / spmm), block sparsity, and
// the int8 dynamic quantization + 2:4 linear.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "lpkit/affine_quant.hpp"
#include "lpkit/errors.hpp"
#include "lpkit/tensor.hpp"

namespace lpkit {

/// 2:4 compressed matrix: two kept values per aligned group of four along K.
///
/// `meta` packs one nibble per group (first index in bits 0-1, second in bits
/// 2-3), two groups per byte with the even group in the low nibble.
struct Sparse24Tensor {
  Shape logical_shape;  // [N, K], K % 4 == 0
  std::vector<float> values;       // N * K / 2, row-major, ascending position within a group
  std::vector<std::uint8_t> meta;  // ceil(N * K / 4 / 2) bytes

  [[nodiscard]] std::size_t rows() const { return logical_shape.at(0); }
  [[nodiscard]] std::size_t cols() const { return logical_shape.at(1); }
  [[nodiscard]] std::size_t groups() const { return rows() * cols() / 4; }

  /// Positions (0..3) of the two kept elements of group g (row-major group index).
  [[nodiscard]] std::array<std::uint8_t, 2> positions(std::size_t g) const {
    const std::uint8_t nib = (meta[g / 2] >> ((g % 2) * 4)) & 0xF;
    return {static_cast<std::uint8_t>(nib & 0x3), static_cast<std::uint8_t>((nib >> 2) & 0x3)};
  }
};

namespace detail {
inline void require_2of4_shape(const Shape& shape) {
  if (shape.size() != 2 || shape[1] % 4 != 0) {
    throw ShapeError("2:4 sparsity needs a 2-D [N,K] tensor with K divisible by 4, got " +
                     shape_str(shape));
  }
}
}  // namespace detail

/// Keeps the two largest-magnitude entries of every aligned group of four
/// (ties keep the lower index) and zeroes the rest.
inline DenseTensor prune_2of4(const DenseTensor& w) {
  detail::require_2of4_shape(w.shape());
  DenseTensor out = w;
  for (std::size_t g = 0; g < w.numel() / 4; ++g) {
    std::array<std::size_t, 4> idx = {0, 1, 2, 3};
    const float* p = w.data().data() + g * 4;
    std::stable_sort(idx.begin(), idx.end(),
                     [p](std::size_t a, std::size_t b) { return std::fabs(p[a]) > std::fabs(p[b]); });
    out[g * 4 + idx[2]] = 0.0F;
    out[g * 4 + idx[3]] = 0.0F;
  }
  return out;
}

inline Sparse24Tensor compress_2of4(const DenseTensor& pruned) {
  detail::require_2of4_shape(pruned.shape());
  Sparse24Tensor s;
  s.logical_shape = pruned.shape();
  const std::size_t groups = pruned.numel() / 4;
  s.values.resize(groups * 2);
  s.meta.assign((groups + 1) / 2, 0);
  const std::size_t groups_per_row = pruned.dim(1) / 4;
  for (std::size_t g = 0; g < groups; ++g) {
    const float* p = pruned.data().data() + g * 4;
    std::array<std::uint8_t, 2> kept{};
    std::size_t n = 0;
    for (std::uint8_t i = 0; i < 4; ++i) {
      if (p[i] != 0.0F) {
        if (n == 2) {
          throw ConstraintError("2:4 constraint violated at row " + std::to_string(g / groups_per_row) +
                                ", group " + std::to_string(g % groups_per_row) +
                                ": more than two nonzeros");
        }
        kept[n++] = i;
      }
    }
    // Fill with the lowest unused positions so zero groups store (0, 1).
    for (std::uint8_t i = 0; n < 2 && i < 4; ++i) {
      if (p[i] == 0.0F) kept[n++] = i;
    }
    std::sort(kept.begin(), kept.end());
    s.values[g * 2] = p[kept[0]];
    s.values[g * 2 + 1] = p[kept[1]];
    s.meta[g / 2] |= static_cast<std::uint8_t>((kept[0] | (kept[1] << 2)) << ((g % 2) * 4));
  }
  return s;
}

inline DenseTensor decompress_2of4(const Sparse24Tensor& s) {
  detail::require_2of4_shape(s.logical_shape);
  DenseTensor out(s.logical_shape);
  for (std::size_t g = 0; g < s.groups(); ++g) {
    const auto pos = s.positions(g);
    if (pos[0] >= pos[1]) {
      throw FormatError("2:4 metadata of group " + std::to_string(g) + " is not strictly ascending");
    }
    out[g * 4 + pos[0]] = s.values[g * 2];
    out[g * 4 + pos[1]] = s.values[g * 2 + 1];
  }
  return out;
}

/// y[M,N] = x[M,K] . decompress(s)^T using only the stored positions, k ascending.
inline DenseTensor spmm_2of4(const Sparse24Tensor& s, const DenseTensor& x) {
  require_matrix(x, "spmm input");
  if (x.dim(1) != s.cols()) {
    throw ShapeError("spmm input " + shape_str(x.shape()) + " does not match sparse weight " +
                     shape_str(s.logical_shape));
  }
  const std::size_t m = x.dim(0);
  const std::size_t n = s.rows();
  const std::size_t gpr = s.cols() / 4;
  DenseTensor y({m, n});
  parallel_rows(m, [&](std::size_t i) {
    const auto xr = x.row(i);
    for (std::size_t r = 0; r < n; ++r) {
      double acc = 0.0;
      for (std::size_t gi = 0; gi < gpr; ++gi) {
        const std::size_t g = r * gpr + gi;
        const auto pos = s.positions(g);
        acc += static_cast<double>(xr[gi * 4 + pos[0]]) * static_cast<double>(s.values[g * 2]);
        acc += static_cast<double>(xr[gi * 4 + pos[1]]) * static_cast<double>(s.values[g * 2 + 1]);
      }
      y.at(i, r) = static_cast<float>(acc);
    }
  });
  return y;
}

// ---------------------------------------------------------------------------
// Block sparsity

struct BlockSparseTensor {
  Shape logical_shape;
  std::size_t block_size = 0;
  std::vector<std::uint8_t> mask;  // [rows/b, cols/b], row-major, 1 = kept
  std::vector<float> payload;      // kept blocks in mask order, each block row-major

  [[nodiscard]] std::size_t block_rows() const { return logical_shape.at(0) / block_size; }
  [[nodiscard]] std::size_t block_cols() const { return logical_shape.at(1) / block_size; }
  [[nodiscard]] std::size_t kept_blocks() const {
    return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
  }
};

/// Keeps the round(keep_fraction * blocks) blocks of largest Frobenius norm
/// (ties keep the row-major earlier block).
inline BlockSparseTensor block_sparsify(const DenseTensor& w, std::size_t block_size, double keep_fraction) {
  if (w.rank() != 2 || block_size == 0 || w.dim(0) % block_size != 0 || w.dim(1) % block_size != 0) {
    throw ShapeError("block size " + std::to_string(block_size) + " does not tile " + shape_str(w.shape()));
  }
  if (!(keep_fraction >= 0.0 && keep_fraction <= 1.0)) {
    throw ConfigError("keep fraction must lie in [0, 1]");
  }
  BlockSparseTensor t;
  t.logical_shape = w.shape();
  t.block_size = block_size;
  const std::size_t br = t.block_rows();
  const std::size_t bc = t.block_cols();
  const std::size_t blocks = br * bc;
  std::vector<double> norms(blocks, 0.0);
  for (std::size_t b = 0; b < blocks; ++b) {
    const std::size_t r0 = (b / bc) * block_size;
    const std::size_t c0 = (b % bc) * block_size;
    double sq = 0.0;
    for (std::size_t r = 0; r < block_size; ++r) {
      for (std::size_t c = 0; c < block_size; ++c) {
        const double v = w.at(r0 + r, c0 + c);
        sq += v * v;
      }
    }
    norms[b] = sq;
  }
  std::vector<std::size_t> order(blocks);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return norms[a] > norms[b]; });
  const auto keep = static_cast<std::size_t>(std::floor(keep_fraction * static_cast<double>(blocks) + 0.5));
  t.mask.assign(blocks, 0);
  for (std::size_t i = 0; i < std::min(keep, blocks); ++i) t.mask[order[i]] = 1;
  for (std::size_t b = 0; b < blocks; ++b) {
    if (t.mask[b] == 0) continue;
    const std::size_t r0 = (b / bc) * block_size;
    const std::size_t c0 = (b % bc) * block_size;
    for (std::size_t r = 0; r < block_size; ++r) {
      for (std::size_t c = 0; c < block_size; ++c) t.payload.push_back(w.at(r0 + r, c0 + c));
    }
  }
  return t;
}

inline DenseTensor block_densify(const BlockSparseTensor& t) {
  const std::size_t bs = t.block_size;
  if (t.payload.size() != t.kept_blocks() * bs * bs) {
    throw FormatError("block-sparse payload holds " + std::to_string(t.payload.size()) +
                      " values but the mask keeps " + std::to_string(t.kept_blocks()) + " blocks");
  }
  DenseTensor out(t.logical_shape);
  const std::size_t bc = t.block_cols();
  std::size_t next = 0;
  for (std::size_t b = 0; b < t.mask.size(); ++b) {
    if (t.mask[b] == 0) continue;
    const std::size_t r0 = (b / bc) * bs;
    const std::size_t c0 = (b % bc) * bs;
    for (std::size_t r = 0; r < bs; ++r) {
      for (std::size_t c = 0; c < bs; ++c) out.at(r0 + r, c0 + c) = t.payload[next++];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// INT8 dynamic quantization + 2:4

/// Pruned-then-quantized weight with its compressed int8 codes.
struct Sparse24Int8Weight {
  Sparse24Tensor pattern;            // positions from the pruned weight; values unused
  std::vector<std::int32_t> codes;   // N * K / 2 int8 codes aligned with pattern.values
  AffineQParams qparams;             // symmetric int8, per row or per group of K
};

inline Sparse24Int8Weight quantize_sparse24_int8(const DenseTensor& w, std::size_t group_size = 0) {
  const DenseTensor pruned = prune_2of4(w);
  Sparse24Int8Weight q;
  q.pattern = compress_2of4(pruned);
  const Granularity gran =
      group_size == 0 ? Granularity::per_axis(0) : Granularity::per_group(group_size);
  q.qparams = choose_qparams(pruned, gran, 8, /*symmetric=*/true);
  const std::vector<std::int32_t> dense_codes = quantize_affine(pruned, q.qparams);
  q.codes.resize(q.pattern.values.size());
  for (std::size_t g = 0; g < q.pattern.groups(); ++g) {
    const auto pos = q.pattern.positions(g);
    q.codes[g * 2] = dense_codes[g * 4 + pos[0]];
    q.codes[g * 2 + 1] = dense_codes[g * 4 + pos[1]];
  }
  return q;
}

namespace detail {

/// Integer GEMM core shared by the sparse and dense int8 paths. `weight_code`
/// returns the int8 weight code at (n, k); positions it reports as skipped
/// contribute exactly zero. Per unit of weight scale: acc_u = sum_k qx*qw in
/// int64, then y = sum_u (double(sx) * double(sw_u)) * acc_u, rounded to float.
template <typename WeightRowFn>
DenseTensor int8_rescaled_gemm(const TokenQuantized& xq, std::size_t m, std::size_t k, std::size_t n,
                               const AffineQParams& wq, std::size_t group, WeightRowFn&& for_each_weight) {
  DenseTensor y({m, n});
  const std::size_t units_per_row = group == 0 ? 1 : k / group;
  parallel_rows(m, [&](std::size_t i) {
    const double sx = xq.qparams.scales[i];
    std::vector<std::int64_t> acc(units_per_row);
    for (std::size_t r = 0; r < n; ++r) {
      std::fill(acc.begin(), acc.end(), 0);
      for_each_weight(r, [&](std::size_t kk, std::int32_t qw) {
        const std::size_t u = group == 0 ? 0 : kk / group;
        acc[u] += static_cast<std::int64_t>(xq.codes[i * k + kk]) * qw;
      });
      double out = 0.0;
      for (std::size_t u = 0; u < units_per_row; ++u) {
        const double sw = wq.scales[group == 0 ? r : r * units_per_row + u];
        out += (sx * sw) * static_cast<double>(acc[u]);
      }
      y.at(i, r) = static_cast<float>(out);
    }
  });
  return y;
}

}  // namespace detail

/// int8 dynamic activations (symmetric, per token) x 2:4 int8 weights,
/// integer sparse accumulation, then rescale. Sparsify runs before quantize so
/// pruned entries stay exactly zero on the integer grid.
inline DenseTensor sparse_quantized_linear(const DenseTensor& x, const Sparse24Int8Weight& w) {
  require_matrix(x, "sparse linear input");
  const std::size_t k = w.pattern.cols();
  if (x.dim(1) != k) {
    throw ShapeError("sparse linear input " + shape_str(x.shape()) + " does not match weight " +
                     shape_str(w.pattern.logical_shape));
  }
  const std::size_t group =
      w.qparams.granularity.kind == Granularity::Kind::kPerGroup ? w.qparams.granularity.param : 0;
  const TokenQuantized xq = dynamic_quant_per_token(x, 8, /*symmetric=*/true);
  const std::size_t gpr = k / 4;
  return detail::int8_rescaled_gemm(xq, x.dim(0), k, w.pattern.rows(), w.qparams, group,
                                    [&](std::size_t r, auto&& emit) {
                                      for (std::size_t gi = 0; gi < gpr; ++gi) {
                                        const std::size_t g = r * gpr + gi;
                                        const auto pos = w.pattern.positions(g);
                                        emit(gi * 4 + pos[0], w.codes[g * 2]);
                                        emit(gi * 4 + pos[1], w.codes[g * 2 + 1]);
                                      }
                                    });
}

inline DenseTensor sparse_quantized_linear(const DenseTensor& x, const DenseTensor& w,
                                           std::size_t group_size = 0) {
  return sparse_quantized_linear(x, quantize_sparse24_int8(w, group_size));
}

/// Dense counterpart: same quantizers and rescale, every k visited. On weights
/// that already satisfy 2:4 this matches sparse_quantized_linear bit for bit.
inline DenseTensor int8_dynamic_linear(const DenseTensor& x, const DenseTensor& w,
                                       std::size_t group_size = 0) {
  require_matrix(x, "int8 linear input");
  require_matrix(w, "int8 linear weight");
  const std::size_t k = w.dim(1);
  if (x.dim(1) != k) throw ShapeError("int8 linear input does not match weight");
  const Granularity gran =
      group_size == 0 ? Granularity::per_axis(0) : Granularity::per_group(group_size);
  const AffineQParams wq = choose_qparams(w, gran, 8, true);
  const std::vector<std::int32_t> wc = quantize_affine(w, wq);
  const TokenQuantized xq = dynamic_quant_per_token(x, 8, true);
  return detail::int8_rescaled_gemm(xq, x.dim(0), k, w.dim(0), wq, group_size,
                                    [&](std::size_t r, auto&& emit) {
                                      for (std::size_t kk = 0; kk < k; ++kk) emit(kk, wc[r * k + kk]);
                                    });
}

}  // namespace lpkit
