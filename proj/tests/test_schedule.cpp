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

#include <gtest/gtest.h>

#include "cfglab/rng.hpp"
#include "cfglab/schedule.hpp"
#include "test_support.hpp"

namespace cfglab {
namespace {

TEST(Schedule, SingleStepLinear) {
  const Schedule s = Schedule::build(ScheduleKind::kLinear, 1, 0.5, 0.5);
  ASSERT_EQ(s.T(), 1);
  EXPECT_EQ(s.betas()[0], 0.5);
  EXPECT_EQ(s.alpha_bars()[0], 0.5);
}

TEST(Schedule, TwoStepHandProduct) {
  const Schedule s = Schedule::build(ScheduleKind::kLinear, 2, 0.1, 0.3);
  EXPECT_NEAR(s.alpha_bars()[0], 0.9, 1e-15);
  EXPECT_NEAR(s.alpha_bars()[1], 0.9 * 0.7, 1e-15);
}

TEST(Schedule, DefaultLinearEndpointsAndProduct) {
  const Schedule s = Schedule::build(ScheduleKind::kLinear, 1000, 1e-4, 0.02);
  EXPECT_GT(s.alpha_bars()[0], 0.99);
  EXPECT_LT(s.alpha_bars()[999], 0.05);
  EXPECT_DOUBLE_EQ(s.betas()[0], 1e-4);
  EXPECT_DOUBLE_EQ(s.betas()[999], 0.02);
  double prod = 1.0;
  for (int t = 0; t < 1000; ++t) {
    prod *= 1.0 - s.betas()[t];
    EXPECT_NEAR(s.alpha_bars()[t], prod, 1e-12);
    EXPECT_EQ(s.alphas()[t], 1.0 - s.betas()[t]);
    if (t > 0) EXPECT_LT(s.alpha_bars()[t], s.alpha_bars()[t - 1]);
  }
}

TEST(Schedule, LinearBetasEvenlySpaced) {
  const Schedule s = Schedule::build(ScheduleKind::kLinear, 5, 0.1, 0.5);
  for (int t = 0; t < 5; ++t) EXPECT_NEAR(s.betas()[t], 0.1 + 0.1 * t, 1e-15);
}

TEST(Schedule, CosineInvariants) {
  const Schedule s = Schedule::build(ScheduleKind::kCosine, 1000, 0.0, 0.0);
  EXPECT_GT(s.alpha_bars()[0], 0.99);
  EXPECT_LT(s.alpha_bars()[999], 0.05);
  for (int t = 0; t < 1000; ++t) {
    EXPECT_GT(s.betas()[t], 0.0);
    EXPECT_LE(s.betas()[t], 0.999);
    if (t > 0) EXPECT_LT(s.alpha_bars()[t], s.alpha_bars()[t - 1]);
  }
}

TEST(Schedule, PosteriorVariancesNonNegative) {
  const Schedule s = Schedule::build(ScheduleKind::kLinear, 100, 1e-3, 0.05);
  for (double v : s.posterior_vars()) EXPECT_GE(v, 0.0);
}

TEST(Schedule, RejectsBadBounds) {
  auto code = [](auto f) {
    try {
      f();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::kIo;
  };
  EXPECT_EQ(code([] { Schedule::build(ScheduleKind::kLinear, 0, 0.1, 0.2); }), ErrorCode::kInvalidParameter);
  EXPECT_EQ(code([] { Schedule::build(ScheduleKind::kLinear, 10, 0.0, 0.2); }), ErrorCode::kInvalidParameter);
  EXPECT_EQ(code([] { Schedule::build(ScheduleKind::kLinear, 10, 0.3, 0.2); }), ErrorCode::kInvalidParameter);
  EXPECT_EQ(code([] { Schedule::build(ScheduleKind::kLinear, 10, 0.1, 1.0); }), ErrorCode::kInvalidParameter);
  const Schedule s = Schedule::build(ScheduleKind::kLinear, 10, 0.1, 0.2);
  EXPECT_EQ(code([&] { s.alpha_bar(10); }), ErrorCode::kInvalidParameter);
  EXPECT_EQ(code([&] { s.alpha_bar(-1); }), ErrorCode::kInvalidParameter);
}

TEST(Schedule, KindNamesRoundTrip) {
  for (ScheduleKind k : {ScheduleKind::kLinear, ScheduleKind::kCosine}) {
    EXPECT_EQ(parse_schedule_kind(to_string(k)), k);
  }
  EXPECT_THROW(parse_schedule_kind("quadratic"), Error);
}

TEST(ForwardNoise, Endpoints) {
  const Vector x0 = Vector::Constant(3, 2.0);
  const Vector eps = Vector::Constant(3, -1.0);
  EXPECT_EQ(forward_noise_at(x0, eps, 1.0), x0);
  EXPECT_EQ(forward_noise_at(x0, eps, 0.0), eps);
}

TEST(ForwardNoise, HandArithmetic) {
  const Vector out = forward_noise_at(Vector::Constant(1, 2.0), Vector::Constant(1, 1.0), 0.25);
  EXPECT_NEAR(out[0], 1.0 + std::sqrt(0.75), 1e-15);
  EXPECT_NEAR(out[0], 1.8660254037844386, 1e-15);
}

TEST(ForwardNoise, DimensionMismatch) {
  try {
    forward_noise_at(Vector::Zero(2), Vector::Zero(3), 0.5);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDimensionMismatch);
  }
}

TEST(ForwardNoise, LinearInBothArguments) {
  const Schedule s = Schedule::build(ScheduleKind::kLinear, 1000, 1e-4, 0.02);
  Stream rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const int t = static_cast<int>(rng.below(1000));
    const Vector a = testing::normal_vector(rng, 4), b = testing::normal_vector(rng, 4);
    const Vector e = testing::normal_vector(rng, 4), f = testing::normal_vector(rng, 4);
    const double p = rng.normal(), q = rng.normal();
    const Vector lhs = forward_noise(p * a + q * b, t, p * e + q * f, s);
    const Vector rhs = p * forward_noise(a, t, e, s) + q * forward_noise(b, t, f, s);
    EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Tweedie, InverseOfHandExample) {
  const Vector x0 = tweedie_x0_at(Vector::Constant(1, 1.8660254037844386), Vector::Constant(1, 1.0), 0.25);
  EXPECT_NEAR(x0[0], 2.0, 1e-15);
}

TEST(Tweedie, ZeroNoiseReduction) {
  const Vector xt = (Vector(2) << 0.3, -1.2).finished();
  const Vector out = tweedie_x0_at(xt, Vector::Zero(2), 0.36);
  EXPECT_NEAR(out[0], 0.3 / 0.6, 1e-15);
  EXPECT_NEAR(out[1], -1.2 / 0.6, 1e-15);
}

TEST(Tweedie, RoundTripRandom) {
  for (ScheduleKind kind : {ScheduleKind::kLinear, ScheduleKind::kCosine}) {
    const Schedule s = Schedule::build(kind, 1000, 1e-4, 0.02);
    Stream rng(5);
    for (int trial = 0; trial < 200; ++trial) {
      const int t = static_cast<int>(rng.below(1000));
      const Vector x0 = testing::normal_vector(rng, 3, 4.0);
      const Vector eps = testing::normal_vector(rng, 3);
      const Vector back = tweedie_x0(forward_noise(x0, t, eps, s), eps, t, s);
      EXPECT_LT((back - x0).cwiseAbs().maxCoeff(), 1e-10) << "t=" << t;
    }
  }
}

TEST(Tweedie, DegenerateTime) {
  try {
    tweedie_x0_at(Vector::Zero(1), Vector::Zero(1), 0.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDegenerateTime);
  }
}

}  // namespace
}  // namespace cfglab
