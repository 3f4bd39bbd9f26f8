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

// Serial reference kernels against their OpenMP/Eigen counterparts.
//
//   bench_kernels --benchmark_filter=Predict
//   OMP_NUM_THREADS=4 bench_kernels

#include <benchmark/benchmark.h>

#include "cfglab/denoiser.hpp"
#include "cfglab/kernels.hpp"
#include "cfglab/rng.hpp"
#include "cfglab/schedule.hpp"

namespace {

using namespace cfglab;

const Denoiser& net() {
  static const Denoiser n = Denoiser::initialized(Architecture{}, 1);
  return n;
}

const Schedule& schedule() {
  static const Schedule s = Schedule::build(ScheduleKind::kLinear, 1000, 1e-4, 0.02);
  return s;
}

Samples rows(Eigen::Index n, std::uint64_t seed) {
  Stream rng(seed);
  Samples x(n, 2);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = 3.0 * rng.normal();
  return x;
}

TrainBatch batch(int n) {
  TrainConfig cfg{ring8(), schedule()};
  cfg.batch = n;
  return draw_batch(cfg, 0);
}

template <Samples (*F)(const Denoiser&, const Samples&, int, Condition)>
void BM_PredictShared(benchmark::State& state) {
  const Samples x = rows(state.range(0), 2);
  for (auto _ : state) benchmark::DoNotOptimize(F(net(), x, 500, {1, kNullLabel}));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

template <LossAndGrads (*F)(const Denoiser&, const TrainBatch&, const Schedule&)>
void BM_LossAndGrads(benchmark::State& state) {
  const TrainBatch b = batch(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(F(net(), b, schedule()));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

template <double (*F)(const Samples&, const Samples&, double)>
void BM_RbfMean(benchmark::State& state) {
  const Samples a = rows(state.range(0), 3), b = rows(state.range(0), 4);
  for (auto _ : state) benchmark::DoNotOptimize(F(a, b, 1.0));
  state.SetItemsProcessed(state.iterations() * state.range(0) * state.range(0));
}

BENCHMARK(BM_PredictShared<kernels::serial::predict_shared>)->Name("PredictShared/serial")->Arg(512)->Arg(4000);
BENCHMARK(BM_PredictShared<kernels::parallel::predict_shared>)->Name("PredictShared/parallel")->Arg(512)->Arg(4000);
BENCHMARK(BM_LossAndGrads<kernels::serial::loss_and_grads>)->Name("LossAndGrads/serial")->Arg(128);
BENCHMARK(BM_LossAndGrads<kernels::parallel::loss_and_grads>)->Name("LossAndGrads/parallel")->Arg(128);
BENCHMARK(BM_RbfMean<kernels::serial::rbf_mean>)->Name("RbfMean/serial")->Arg(2000);
BENCHMARK(BM_RbfMean<kernels::parallel::rbf_mean>)->Name("RbfMean/parallel")->Arg(2000);

}  // namespace

BENCHMARK_MAIN();
