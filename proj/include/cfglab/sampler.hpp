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

#include <cstdint>
#include <string>
#include <vector>

#include "cfglab/common.hpp"
#include "cfglab/guidance.hpp"
#include "cfglab/schedule.hpp"

namespace cfglab {

/// Target of the last DDIM hop: alpha_bar = 1.
inline constexpr int kClean = -1;

/// Deterministic DDIM update
///   x_prev = sqrt(ab_prev) g(x_t, eps) + sqrt(1 - ab_prev) eps,
/// with ab_prev = 1 when t_prev == kClean.
Vector ddim_step(const Vector& x_t, const Vector& eps, int t, int t_prev, const Schedule& schedule);
Samples ddim_step(const Samples& x_t, const Samples& eps, int t, int t_prev, const Schedule& schedule);

/// S evenly strided indices from T - 1 down to 0 (S <= T).
std::vector<int> timestep_subsequence(int T, int S);

struct SamplerConfig {
  int num_steps = 50;
  GuidanceSpec spec;
  int n_chains = 0;
  std::uint64_t seed = 0;
  /// Chain i draws x_T from Stream::derive(seed, first_chain + i).
  std::uint64_t first_chain = 0;
  bool record_trajectory = false;
};

struct Snapshot {
  int step = 0;
  int t = 0;
  int t_prev = kClean;
  Samples x_t;
  Samples eps;
  Samples x0t;
  Samples x_prev;
};

struct RunRecord {
  std::string digest;
  std::string description;
  Samples samples;
  std::vector<Snapshot> trajectory;
  std::vector<double> step_ms;  // summed over chain blocks
  int evaluations_per_step = 0;
};

/// Digest of everything that determines the samples.
std::string sampler_digest(const SamplerConfig& cfg, const Schedule& schedule);

/// Runs every chain through the subsequence. Chains are processed in fixed
/// blocks on OpenMP threads; a non-finite state aborts with kDivergence
/// naming the step.
RunRecord sample_run(const SamplerConfig& cfg, const Schedule& schedule);

/// Structured text: header keys, [samples] CSV, optional [trajectory] CSV,
/// [timings_ms] CSV.
std::string run_record_to_text(const RunRecord& rec);
void save_run_record(const std::string& path, const RunRecord& rec);
/// Reads back digest, description, samples and timings.
RunRecord load_run_record(const std::string& path);

}  // namespace cfglab
