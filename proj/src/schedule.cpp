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

#include "cfglab/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace cfglab {

std::string_view to_string(ScheduleKind kind) {
  return kind == ScheduleKind::kLinear ? "linear" : "cosine";
}

ScheduleKind parse_schedule_kind(std::string_view s) {
  if (s == "linear") return ScheduleKind::kLinear;
  if (s == "cosine") return ScheduleKind::kCosine;
  fail(ErrorCode::kInvalidParameter, "unknown schedule kind '" + std::string(s) + "'");
}

namespace {

constexpr double kCosineOffset = 0.008;
constexpr double kCosineMaxBeta = 0.999;

std::vector<double> linear_betas(int T, double beta_min, double beta_max) {
  if (!(beta_min > 0.0) || !(beta_min <= beta_max) || !(beta_max < 1.0)) {
    fail(ErrorCode::kInvalidParameter,
         "linear schedule needs 0 < beta_min <= beta_max < 1");
  }
  std::vector<double> betas(T);
  for (int t = 0; t < T; ++t) {
    const double frac = T == 1 ? 0.0 : static_cast<double>(t) / (T - 1);
    betas[t] = beta_min + frac * (beta_max - beta_min);
  }
  betas.back() = beta_max;
  if (T == 1) betas[0] = beta_min;
  return betas;
}

std::vector<double> cosine_betas(int T) {
  auto f = [T](int t) {
    const double u = (static_cast<double>(t) / T + kCosineOffset) / (1.0 + kCosineOffset);
    const double c = std::cos(u * std::numbers::pi / 2.0);
    return c * c;
  };
  std::vector<double> betas(T);
  for (int t = 0; t < T; ++t) {
    betas[t] = std::min(1.0 - f(t + 1) / f(t), kCosineMaxBeta);
  }
  return betas;
}

}  // namespace

Schedule Schedule::build(ScheduleKind kind, int T, double beta_min, double beta_max) {
  if (T < 1) fail(ErrorCode::kInvalidParameter, "schedule needs T >= 1");
  Schedule s;
  s.params_ = {kind, T, beta_min, beta_max};
  s.betas_ = kind == ScheduleKind::kLinear ? linear_betas(T, beta_min, beta_max)
                                           : cosine_betas(T);
  s.alphas_.resize(T);
  s.alpha_bars_.resize(T);
  s.posterior_vars_.resize(T);
  double prod = 1.0;
  for (int t = 0; t < T; ++t) {
    s.alphas_[t] = 1.0 - s.betas_[t];
    const double prev = prod;
    prod *= s.alphas_[t];
    s.alpha_bars_[t] = prod;
    s.posterior_vars_[t] = s.betas_[t] * (1.0 - prev) / (1.0 - prod);
  }
  return s;
}

void Schedule::check_step(int t) const {
  if (t < 0 || t >= params_.T) {
    fail(ErrorCode::kInvalidParameter,
         "step index " + std::to_string(t) + " outside [0, " + std::to_string(params_.T) + ")");
  }
}

double Schedule::alpha_bar(int t) const {
  check_step(t);
  return alpha_bars_[t];
}

Vector forward_noise_at(const Vector& x0, const Vector& eps, double alpha_bar) {
  check_dims(x0.size(), eps.size(), "forward_noise");
  return std::sqrt(alpha_bar) * x0 + std::sqrt(1.0 - alpha_bar) * eps;
}

Vector forward_noise(const Vector& x0, int t, const Vector& eps, const Schedule& schedule) {
  return forward_noise_at(x0, eps, schedule.alpha_bar(t));
}

Vector tweedie_x0_at(const Vector& x_t, const Vector& eps_hat, double alpha_bar) {
  check_dims(x_t.size(), eps_hat.size(), "tweedie_x0");
  if (!(alpha_bar > 0.0)) fail(ErrorCode::kDegenerateTime, "tweedie_x0: alpha_bar = 0");
  return (x_t - std::sqrt(1.0 - alpha_bar) * eps_hat) / std::sqrt(alpha_bar);
}

Vector tweedie_x0(const Vector& x_t, const Vector& eps_hat, int t, const Schedule& schedule) {
  return tweedie_x0_at(x_t, eps_hat, schedule.alpha_bar(t));
}

}  // namespace cfglab
