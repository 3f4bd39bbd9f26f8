// Copyright 2026 The cfglab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <span>
#include <vector>

#include "cfglab/common.hpp"
#include "cfglab/denoiser.hpp"

// Hot loops, in two flavours with identical contracts:
//
//   serial::   plain scalar loops, one sample at a time. Kept as the
//              reference the tests compare against.
//   parallel:: Eigen GEMMs over fixed-size column chunks, chunks spread
//              across OpenMP threads. Chunk boundaries do not depend on the
//              thread count and partial sums are reduced in chunk order, so
//              results are bit-identical for any OMP_NUM_THREADS.
//
// The two agree to rounding (the parallel tanh is evaluated through exp).

namespace cfglab::kernels {

/// Columns per work unit in the parallel kernels.
inline constexpr Eigen::Index kTrainChunk = 64;
inline constexpr Eigen::Index kPredictChunk = 256;

namespace serial {

/// Row i evaluated at (t[i], cond[i]).
Samples predict(const Denoiser& net, const Samples& x, std::span<const int> t,
                std::span<const Condition> cond);

/// Every row at the same (t, cond).
Samples predict_shared(const Denoiser& net, const Samples& x, int t, Condition cond);

LossAndGrads loss_and_grads(const Denoiser& net, const TrainBatch& batch, const Schedule& schedule);

/// Mean of exp(-|a_i - b_j|^2 / (2 h^2)) over all pairs.
double rbf_mean(const Samples& a, const Samples& b, double bandwidth);

}  // namespace serial

namespace parallel {

Samples predict(const Denoiser& net, const Samples& x, std::span<const int> t,
                std::span<const Condition> cond);

/// Folds the time and condition inputs into the first-layer bias once.
Samples predict_shared(const Denoiser& net, const Samples& x, int t, Condition cond);

LossAndGrads loss_and_grads(const Denoiser& net, const TrainBatch& batch, const Schedule& schedule);

double rbf_mean(const Samples& a, const Samples& b, double bandwidth);

}  // namespace parallel

}  // namespace cfglab::kernels
