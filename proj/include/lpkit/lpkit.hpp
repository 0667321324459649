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

#include "lpkit/errors.hpp"
#include "lpkit/lp_dtypes.hpp"
#include "lpkit/tensor.hpp"
#include "lpkit/rng.hpp"
#include "lpkit/metrics.hpp"
#include "lpkit/affine_quant.hpp"
#include "lpkit/float8_train.hpp"
#include "lpkit/mx_quant.hpp"
#include "lpkit/quantized_tensor.hpp"
#include "lpkit/fake_quant.hpp"
#include "lpkit/sparsity.hpp"
#include "lpkit/autograd.hpp"
#include "lpkit/qat.hpp"
#include "lpkit/model_io.hpp"
#include "lpkit/experiments.hpp"
