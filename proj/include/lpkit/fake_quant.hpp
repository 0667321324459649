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

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lpkit/affine_quant.hpp"
#include "lpkit/tensor.hpp"

namespace lpkit {

struct FakeQuantizeConfig {
  int target_bits = 8;
  Granularity granularity = Granularity::per_tensor();
  bool symmetric = true;
  std::optional<std::size_t> group_size;

  /// int8 per-token activations, e.g. the 8da4w activation side.
  static FakeQuantizeConfig per_token(int bits, bool symmetric) {
    return {bits, Granularity::per_token(), symmetric, std::nullopt};
  }
  /// Symmetric group-wise weights along the last dimension.
  static FakeQuantizeConfig grouped(int bits, std::size_t group_size) {
    return {bits, Granularity::per_group(group_size), true, group_size};
  }
  static FakeQuantizeConfig per_channel(int bits) {
    return {bits, Granularity::per_axis(0), true, std::nullopt};
  }

  void validate() const {
    signed_range(target_bits);
    if (granularity.kind == Granularity::Kind::kPerGroup) {
      if (!group_size || *group_size != granularity.param) {
        throw ConfigError("fake-quantize group_size must match the per-group granularity");
      }
    } else if (group_size) {
      throw ConfigError("fake-quantize group_size given without per-group granularity");
    }
  }

  friend bool operator==(const FakeQuantizeConfig&, const FakeQuantizeConfig&) = default;
};

/// Forward value plus the straight-through surrogate gradient.
struct FakeQuantResult {
  DenseTensor value;
  std::vector<std::uint8_t> ste_mask;  // 1 where the pre-clamp code lies in [qmin, qmax]
};

/// dequantize(quantize(x, qp), qp) with a 0/1 pass-through mask that is zero
/// exactly where clamping changed the code.
inline FakeQuantResult fake_quantize_with(const DenseTensor& x, const AffineQParams& qp) {
  const UnitLayout layout(x.shape(), qp.granularity);
  FakeQuantResult r{DenseTensor(x.shape()), std::vector<std::uint8_t>(x.numel(), 1)};
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const std::size_t u = layout.unit_of(i);
    const float pre = round_half_even(x[i] / qp.scales[u]) + static_cast<float>(qp.zero_points[u]);
    if (pre < static_cast<float>(qp.qmin) || pre > static_cast<float>(qp.qmax)) r.ste_mask[i] = 0;
    const std::int32_t q = quantize_value(x[i], qp.scales[u], qp.zero_points[u], qp.qmin, qp.qmax);
    r.value[i] = dequantize_value(q, qp.scales[u], qp.zero_points[u]);
  }
  return r;
}

/// Fake quantization with qparams chosen from x itself on every call.
inline FakeQuantResult fake_quantize(const DenseTensor& x, const FakeQuantizeConfig& cfg) {
  cfg.validate();
  return fake_quantize_with(x, choose_qparams(x, cfg.granularity, cfg.target_bits, cfg.symmetric));
}

}  // namespace lpkit
