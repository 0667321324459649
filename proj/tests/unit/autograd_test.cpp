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

#include "lpkit/autograd.hpp"
#include "lpkit/rng.hpp"

namespace lpkit {
namespace {

DenseTensor away_from_zero(Shape shape, SplitMix64& rng) {
  DenseTensor t = random_normal(std::move(shape), rng);
  for (float& v : t.data()) v = v >= 0.0F ? v + 0.1F : v - 0.1F;
  return t;
}

TEST(Autograd, SmoothOpsMatchFiniteDifferences) {
  SplitMix64 rng(41);
  EXPECT_LE(grad_check(OpKind::kMatmul, {random_normal({3, 5}, rng), random_normal({5, 4}, rng)}, 1e-2)
                .max_rel_deviation, 1e-4);
  EXPECT_LE(grad_check(OpKind::kAddBias, {random_normal({3, 4}, rng), random_normal({4}, rng)}, 1e-2)
                .max_rel_deviation, 1e-4);
  EXPECT_LE(grad_check(OpKind::kRelu, {away_from_zero({4, 4}, rng)}, 1e-2).max_rel_deviation, 1e-4);
  EXPECT_LE(grad_check(OpKind::kMseLoss, {random_normal({4, 3}, rng), random_normal({4, 3}, rng)}, 1e-2)
                .max_rel_deviation, 1e-4);
  EXPECT_LE(grad_check(OpKind::kFp8Linear, {random_normal({6, 8}, rng), random_normal({4, 8}, rng)}, 1e-2)
                .max_rel_deviation, 1e-4);
  EXPECT_TRUE(grad_check(OpKind::kFakeQuantize, {random_normal({2, 2}, rng)}, 1e-2).skipped);
}

TEST(Autograd, TransposedMatmulAndChain) {
  SplitMix64 rng(42);
  const DenseTensor x = random_normal({4, 6}, rng);
  const DenseTensor w = random_normal({3, 6}, rng);
  const DenseTensor b = random_normal({3}, rng);
  const DenseTensor y = random_normal({4, 3}, rng);
  auto build = [&](Tape& t, const std::vector<Var>& v) {
    return t.mse_loss(t.relu(t.add_bias(t.matmul(t.leaf(x, false), v[0], true), v[1])), y);
  };
  const GradCheckResult r = grad_check_fn(build, {w, b}, DenseTensor({1}, {1.0F}), 1e-3);
  EXPECT_LE(r.max_rel_deviation, 1e-3);
}

TEST(Autograd, FakeQuantizeUsesStraightThroughMask) {
  Tape t;
  const Var x = t.leaf(DenseTensor({1, 4}, {-1.0F, 0.3F, 0.6F, 1.0F}));
  const Var y = t.fake_quantize(x, FakeQuantizeConfig::per_token(4, true));
  const auto g = t.backward(y, DenseTensor({1, 4}, {1, 2, 3, 4}));
  EXPECT_EQ(g[x.id]->values(), (std::vector<float>{1, 2, 3, 4}));
}

TEST(Autograd, EmbeddingScattersAndAccumulates) {
  Tape t;
  const Var table = t.leaf(DenseTensor({3, 2}, {1, 2, 3, 4, 5, 6}));
  const Var e = t.embedding(table, {2, 0, 2});
  EXPECT_EQ(t.value(e).values(), (std::vector<float>{5, 6, 1, 2, 5, 6}));
  const auto g = t.backward(e, DenseTensor::filled({3, 2}, 1.0F));
  EXPECT_EQ(g[table.id]->values(), (std::vector<float>{1, 1, 0, 0, 2, 2}));
  EXPECT_THROW(t.embedding(table, {3}), BoundsError);
}

TEST(Autograd, ErrorsAndSgd) {
  Tape t;
  const Var a = t.leaf(DenseTensor({2, 3}));
  EXPECT_THROW(t.matmul(a, a), ShapeError);
  EXPECT_THROW(t.mse_loss(a, DenseTensor({3, 2})), ShapeError);
  EXPECT_THROW(t.backward(a, DenseTensor({3})), ShapeError);
  DenseTensor p({2}, {1.0F, 2.0F});
  sgd_step(p, DenseTensor({2}, {1.0F, -1.0F}), 0.5F);
  EXPECT_EQ(p.values(), (std::vector<float>{0.5F, 2.5F}));
  EXPECT_THROW(sgd_step(p, DenseTensor({3}), 0.1F), ShapeError);
}

}  // namespace
}  // namespace lpkit
