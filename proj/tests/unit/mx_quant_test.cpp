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

#include <gtest/gtest.h>

#include "lpkit/metrics.hpp"
#include "lpkit/mx_quant.hpp"
#include "lpkit/rng.hpp"

namespace lpkit {
namespace {

TEST(Mx, SharedExponent) {
  EXPECT_EQ(mx_shared_exponent(6.0F, formats::e2m1()), 0);      // ilogb(6)=2, emax(E2M1)=2
  EXPECT_EQ(mx_shared_exponent(448.0F, formats::e4m3()), 0);    // ilogb(448)=8, emax=8
  EXPECT_EQ(mx_shared_exponent(1.0F, formats::e4m3()), -8);
  EXPECT_EQ(mx_shared_exponent(0.0F, formats::e4m3()), -127);
  EXPECT_EQ(mx_shared_exponent(1e-38F, formats::e4m3()), -127);  // clamped
}

TEST(Mx, QuantizeLayoutAndExactValues) {
  std::vector<float> v(32, 0.0F);
  v[0] = 6.0F;
  v[1] = -3.0F;
  v[2] = 0.5F;
  const DenseTensor x({1, 32}, v);
  const MxBlockTensor t = mx_quantize(x, MxElement::kFp4E2M1);
  EXPECT_EQ(t.scale_codes.size(), 1U);
  EXPECT_EQ(t.scale_codes[0], 127);
  EXPECT_EQ(t.elem_codes.size(), 16U);
  EXPECT_EQ(t.elem_codes[0] & 0xF, 0x7);  // +6
  EXPECT_EQ(t.elem_codes[0] >> 4, 0xD);   // -3
  EXPECT_TRUE(mx_dequantize(t).bit_equal(x));
}

TEST(Mx, ZeroBlock) {
  const MxBlockTensor t = mx_quantize(DenseTensor::zeros({2, 32}), MxElement::kFp6E2M3);
  EXPECT_EQ(t.scale_codes, (std::vector<std::uint8_t>{0, 0}));
  EXPECT_EQ(t.elem_codes.size(), 64U);
  EXPECT_TRUE(mx_dequantize(t).bit_equal(DenseTensor::zeros({2, 32})));
}

TEST(Mx, Fp4IsCoarsestElement) {
  SplitMix64 rng(11);
  const DenseTensor x = random_normal({8, 64}, rng);
  const double s4 = error_stats(x, mx_dequantize(mx_quantize(x, MxElement::kFp4E2M1))).sqnr_db();
  const double s6 = error_stats(x, mx_dequantize(mx_quantize(x, MxElement::kFp6E2M3))).sqnr_db();
  const double s8 = error_stats(x, mx_dequantize(mx_quantize(x, MxElement::kFp8E4M3))).sqnr_db();
  // E2M3 and E4M3 share a 3-bit mantissa, so only FP4 is strictly worse.
  EXPECT_LT(s4, s6);
  EXPECT_LT(s4, s8);
  EXPECT_NEAR(s6, s8, 3.0);
  EXPECT_GT(s4, 5.0);
}

TEST(Mx, ElementsStayInRange) {
  SplitMix64 rng(12);
  const DenseTensor x = random_normal({4, 32}, rng, 100.0);
  for (MxElement e : {MxElement::kFp4E2M1, MxElement::kFp6E2M3, MxElement::kFp8E4M3}) {
    const MxBlockTensor t = mx_quantize(x, e, 16);
    for (std::size_t i = 0; i < t.numel(); ++i) {
      EXPECT_FALSE(mx_element_format(e).is_nan_code(t.elem_code(i)));
    }
  }
}

TEST(Mx, GemmAndErrors) {
  SplitMix64 rng(13);
  const MxBlockTensor a = mx_quantize(random_normal({4, 32}, rng), MxElement::kFp8E4M3);
  const MxBlockTensor b = mx_quantize(random_normal({32, 32}, rng), MxElement::kFp8E4M3);
  EXPECT_TRUE(mx_gemm(a, b).bit_equal(gemm_ref(mx_dequantize(a), mx_dequantize(b))));
  EXPECT_THROW(mx_quantize(DenseTensor({2, 30}), MxElement::kFp8E4M3), ConfigError);
  EXPECT_THROW(parse_mx_element("E3M4"), ConfigError);
  EXPECT_EQ(parse_mx_element("mxfp6"), MxElement::kFp6E2M3);
}

}  // namespace
}  // namespace lpkit
