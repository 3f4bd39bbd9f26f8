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
#include <optional>
#include <vector>

#include "cfglab/common.hpp"
#include "cfglab/gmm.hpp"

namespace cfglab {

/// Exact W1 between equal-size 1-D samples: mean |sorted a - sorted b|.
double wasserstein_1d(std::vector<double> a, std::vector<double> b);

/// Unit directions drawn from Stream(seed); in 1-D these are +-1.
Samples random_directions(int dim, int count, std::uint64_t seed);

/// Mean wasserstein_1d over random unit projections.
double sliced_wasserstein(const Samples& a, const Samples& b, int num_projections, std::uint64_t seed);

/// Median pairwise distance within `ref` (over at most `max_points` leading rows).
double median_heuristic_bandwidth(const Samples& ref, Eigen::Index max_points = 1000);

/// Biased (V-statistic) squared MMD with an RBF kernel; clamped at 0.
double mmd_rbf(const Samples& a, const Samples& b, double bandwidth);

struct ModeReport {
  std::vector<int> counts;  // per component
  int unassigned = 0;
  double coverage = 0.0;    // fraction of components with >= 1 sample
};

/// Nearest-mean assignment, kept only within radius_sigmas * sqrt(var) of
/// that mean (per-dimension largest variance).
ModeReport mode_report(const Samples& samples, const GaussianMixture& world, double radius_sigmas);

struct MetricReport {
  std::optional<double> w1_exact;  // 1-D only
  double sliced_w = 0.0;
  double mmd_rbf = 0.0;
  double mmd_bandwidth = 0.0;
  ModeReport modes;
  std::optional<double> eps_oracle_mse;
};

struct MetricOptions {
  int projections = 64;
  std::uint64_t projection_seed = 0;
  double radius_sigmas = 4.0;
  /// MMD is quadratic; evaluated on at most this many leading rows of each set.
  Eigen::Index mmd_max_points = 2000;
};

/// Compares `samples` against `reference` draws of `world`.
MetricReport evaluate_samples(const Samples& samples, const Samples& reference,
                              const GaussianMixture& world, const MetricOptions& opts = {});

}  // namespace cfglab
