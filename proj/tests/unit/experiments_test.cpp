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

#include "lpkit/experiments.hpp"

namespace lpkit {
namespace {

TEST(QatDemo, DeterministicAcrossRunsAndThreads) {
  const QuantScheme s = QuantScheme::int4_weight_only(32);
  set_num_threads(1);
  const QatDemoResult a = run_qat_demo(3, 40, s);
  set_num_threads(4);
  const QatDemoResult b = run_qat_demo(3, 40, s);
  set_num_threads(1);
  EXPECT_EQ(a.csv, b.csv);
  EXPECT_EQ(a.csv.substr(0, a.csv.find('\n')), "step,train_loss,eval_loss_fp,eval_loss_quantized");
  EXPECT_NE(a.csv.find("# fp_loss="), std::string::npos);
}

TEST(QatDemo, ZeroStepsIsPtqOfInit) {
  const QatDemoResult r = run_qat_demo(4, 0, QuantScheme::int8_dynamic_int4_weight(32));
  EXPECT_EQ(r.qat_loss, r.ptq_loss);
  EXPECT_EQ(r.recovery(), 0.0);
}

TEST(QatDemo, TrainingReducesLoss) {
  const QatDemoResult r = run_qat_demo(5, 200, QuantScheme::int4_weight_only(32));
  const QatDemoResult r0 = run_qat_demo(5, 0, QuantScheme::int4_weight_only(32));
  EXPECT_LT(r.fp_loss, r0.fp_loss);
  EXPECT_LT(r.qat_loss, r0.qat_loss);
}

TEST(Fp8Demo, NoneColumnEqualsPlainAutograd) {
  const ToyConfig c = fp8_demo_config();
  const Fp8DemoResult r = run_fp8_demo(6, 30, "none");
  SplitMix64 rng(6);
  const ModuleGraph teacher = make_mlp(c, rng);
  ModuleGraph g = make_mlp(c, rng);
  SplitMix64 data(6 * 0x9E3779B97F4A7C15ULL + 2);
  for (std::size_t s = 0; s < 30; ++s) {
    const detail::Batch b = detail::teacher_batch(teacher, c.batch, c.d_in, c.label_noise, data);
    EXPECT_EQ(detail::train_step(g, b.x, b.y, c.lr), r.losses[0][s]);
  }
  EXPECT_TRUE(r.losses[1].empty());
  EXPECT_NE(r.csv.find("\n1,"), std::string::npos);
  EXPECT_EQ(r.csv.substr(0, r.csv.find('\n')), "step,loss_none,loss_tensorwise,loss_rowwise,loss_rowwise_gw_hp");
}

TEST(Fp8Demo, RecipesTrackHighPrecision) {
  set_num_threads(2);
  const Fp8DemoResult a = run_fp8_demo(7, 300);
  set_num_threads(1);
  const Fp8DemoResult b = run_fp8_demo(7, 300);
  EXPECT_EQ(a.csv, b.csv);
  for (std::size_t i = 1; i < 4; ++i) {
    EXPECT_LT(std::fabs(a.final_loss(i) - a.final_loss(0)) / a.final_loss(0), 0.05) << i;
  }
  EXPECT_THROW(run_fp8_demo(7, 3, "blockwise"), ConfigError);
}

}  // namespace
}  // namespace lpkit
