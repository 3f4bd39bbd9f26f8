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

#include <string>
#include <string_view>
#include <vector>

#include "cfglab/common.hpp"

namespace cfglab {

enum class ScheduleKind { kLinear, kCosine };

std::string_view to_string(ScheduleKind kind);
ScheduleKind parse_schedule_kind(std::string_view s);

/// What a checkpoint stores; the derived vectors are rebuilt from it.
struct ScheduleParams {
  ScheduleKind kind = ScheduleKind::kLinear;
  int T = 1000;
  double beta_min = 1e-4;
  double beta_max = 0.02;

  bool operator==(const ScheduleParams&) const = default;
};

/// Discrete variance schedule, 0-based: t = 0 is the least-noised step.
/// Immutable once built.
class Schedule {
 public:
  static Schedule build(ScheduleKind kind, int T, double beta_min, double beta_max);
  static Schedule build(const ScheduleParams& p) {
    return build(p.kind, p.T, p.beta_min, p.beta_max);
  }

  const ScheduleParams& params() const { return params_; }
  int T() const { return params_.T; }
  const std::vector<double>& betas() const { return betas_; }
  const std::vector<double>& alphas() const { return alphas_; }
  const std::vector<double>& alpha_bars() const { return alpha_bars_; }
  const std::vector<double>& posterior_vars() const { return posterior_vars_; }

  /// Throws kInvalidParameter for t outside [0, T).
  double alpha_bar(int t) const;
  void check_step(int t) const;

 private:
  ScheduleParams params_;
  std::vector<double> betas_, alphas_, alpha_bars_, posterior_vars_;
};

/// sqrt(ab) x0 + sqrt(1 - ab) eps.
Vector forward_noise_at(const Vector& x0, const Vector& eps, double alpha_bar);
Vector forward_noise(const Vector& x0, int t, const Vector& eps, const Schedule& schedule);

/// Clean-observation estimate g(x_t, eps) = (x_t - sqrt(1 - ab) eps) / sqrt(ab).
/// Rejects ab == 0 with kDegenerateTime.
Vector tweedie_x0_at(const Vector& x_t, const Vector& eps_hat, double alpha_bar);
Vector tweedie_x0(const Vector& x_t, const Vector& eps_hat, int t, const Schedule& schedule);

}  // namespace cfglab
