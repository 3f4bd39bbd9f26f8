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

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "cfglab/gmm.hpp"
#include "cfglab/rng.hpp"
#include "test_support.hpp"

namespace cfglab {
namespace {

using testing::naive_log_density;

GaussianMixture one_d(std::vector<std::pair<double, double>> mean_var, std::vector<double> weights) {
  std::vector<Component> cs;
  for (std::size_t k = 0; k < mean_var.size(); ++k) {
    cs.push_back({weights[k], Vector::Constant(1, mean_var[k].first), Vector::Constant(1, mean_var[k].second),
                  static_cast<int>(k), static_cast<int>(k)});
  }
  return GaussianMixture(cs);
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::kIo;
}

TEST(Mixture, WeightsNormalized) {
  const GaussianMixture g = one_d({{0, 1}, {1, 2}, {3, 1}}, {1, 2, 5});
  double sum = 0.0;
  for (const auto& c : g.components()) sum += c.weight;
  EXPECT_NEAR(sum, 1.0, 1e-12);
  EXPECT_DOUBLE_EQ(g[2].weight, 5.0 / 8.0);
}

TEST(Mixture, RejectsInvalid) {
  EXPECT_THROW(GaussianMixture({}), Error);
  EXPECT_THROW(one_d({{0, 0.0}}, {1}), Error);
  EXPECT_THROW(one_d({{0, 1}}, {-1}), Error);
  std::vector<Component> mixed = {{1, Vector::Zero(1), Vector::Ones(1), 0, 0},
                                  {1, Vector::Zero(2), Vector::Ones(2), 0, 0}};
  EXPECT_THROW(GaussianMixture{mixed}, Error);
}

TEST(Ring8, Layout) {
  const GaussianMixture g = ring8();
  ASSERT_EQ(g.size(), 8u);
  for (std::size_t k = 0; k < 8; ++k) {
    EXPECT_NEAR(g[k].mean.norm(), 4.0, 1e-12);
    EXPECT_EQ(g[k].coarse, static_cast<int>(k % 4));
    EXPECT_EQ(g[k].fine, static_cast<int>(k));
    EXPECT_EQ(g[k].var, Vector::Constant(2, 0.05));
  }
  EXPECT_EQ(g.coarse_vocab(), 4);
  EXPECT_EQ(g.fine_vocab(), 8);
  const GaussianMixture n = narrow2();
  ASSERT_EQ(n.size(), 2u);
  EXPECT_EQ(n[0].mean, g[0].mean);
  EXPECT_EQ(n[1].mean, g[1].mean);
}

TEST(Restrict, NoFilterIsIdentity) {
  const GaussianMixture g = ring8();
  const GaussianMixture r = restrict(g, std::nullopt, std::nullopt);
  ASSERT_EQ(r.size(), g.size());
  for (std::size_t k = 0; k < g.size(); ++k) {
    EXPECT_EQ(r[k].weight, g[k].weight);
    EXPECT_EQ(r[k].mean, g[k].mean);
  }
}

TEST(Restrict, SingleComponentRenormalized) {
  const GaussianMixture g = one_d({{-2, 1}, {2, 1}}, {1, 1});
  const GaussianMixture r = restrict(g, 0, std::nullopt);
  ASSERT_EQ(r.size(), 1u);
  EXPECT_DOUBLE_EQ(r[0].weight, 1.0);
  EXPECT_EQ(r[0].mean[0], -2.0);
}

TEST(Restrict, EmptyCondition) {
  EXPECT_EQ(code_of([] { restrict(ring8(), 9, std::nullopt); }), ErrorCode::kEmptyCondition);
  EXPECT_EQ(code_of([] { restrict(ring8(), 0, 1); }), ErrorCode::kEmptyCondition);
  EXPECT_EQ(code_of([] { sample(ring8(), 10, 1, std::nullopt, 12); }), ErrorCode::kEmptyCondition);
}

TEST(Restrict, MergedFineLabelsDensityRatioConstant) {
  const GaussianMixture g = ring8();
  const GaussianMixture kept = merge(restrict(g, std::nullopt, 0), 1.0, restrict(g, std::nullopt, 1), 1.0);
  const double retained = retained_weight(g, std::nullopt, 0) + retained_weight(g, std::nullopt, 1);
  EXPECT_NEAR(retained, 0.25, 1e-15);
  for (std::size_t k = 0; k < 2; ++k) {
    const double diff = log_density(kept, g[k].mean) - log_density(g, g[k].mean);
    EXPECT_NEAR(diff, -std::log(retained), 1e-6);
  }
}

TEST(Restrict, ProportionalityAtMeansOfCoarseClass) {
  const GaussianMixture g = ring8();
  for (int c = 0; c < 4; ++c) {
    const GaussianMixture r = restrict(g, c, std::nullopt);
    ASSERT_EQ(r.size(), 2u);
    for (const auto& comp : r.components()) {
      EXPECT_NEAR(log_density(r, comp.mean) - log_density(g, comp.mean), std::log(4.0), 1e-6);
    }
  }
}

TEST(Marginal, Endpoints) {
  const GaussianMixture g = ring8();
  const GaussianMixture same = marginal_at(g, 1.0);
  for (std::size_t k = 0; k < g.size(); ++k) {
    EXPECT_EQ(same[k].mean, g[k].mean);
    EXPECT_EQ(same[k].var, g[k].var);
  }
  const GaussianMixture noise = marginal_at(g, 0.0);
  for (const auto& c : noise.components()) {
    EXPECT_EQ(c.mean, Vector::Zero(2));
    EXPECT_EQ(c.var, Vector::Ones(2));
  }
}

TEST(Marginal, HandExampleAndMonteCarlo) {
  const GaussianMixture g = one_d({{4, 1}}, {1});
  const GaussianMixture m = marginal_at(g, 0.25);
  EXPECT_DOUBLE_EQ(m[0].mean[0], 2.0);
  EXPECT_DOUBLE_EQ(m[0].var[0], 1.0);

  // Kolmogorov-Smirnov distance of noised draws against N(2, 1).
  const int n = 100000;
  Stream rng(99);
  std::vector<double> xs(n);
  for (int i = 0; i < n; ++i) {
    const double x0 = 4.0 + rng.normal();
    xs[i] = forward_noise_at(Vector::Constant(1, x0), Vector::Constant(1, rng.normal()), 0.25)[0];
  }
  std::sort(xs.begin(), xs.end());
  double ks = 0.0;
  for (int i = 0; i < n; ++i) {
    const double cdf = 0.5 * std::erfc(-(xs[i] - 2.0) / std::sqrt(2.0));
    ks = std::max({ks, std::abs(cdf - static_cast<double>(i) / n), std::abs(cdf - static_cast<double>(i + 1) / n)});
  }
  EXPECT_LT(ks, 0.01);
}

TEST(Marginal, ApproachesStandardNormal) {
  const Schedule s = Schedule::build(ScheduleKind::kLinear, 1000, 1e-4, 0.02);
  const GaussianMixture g = gaussian2d();
  const GaussianMixture m = marginal_at_t(g, s, 999);
  // KL(N(mu, diag v) || N(0, I)) in closed form.
  double kl = 0.0;
  for (int j = 0; j < 2; ++j) {
    const double v = m[0].var[j], mu = m[0].mean[j];
    kl += 0.5 * (v + mu * mu - 1.0 - std::log(v));
  }
  EXPECT_LT(kl, 1e-3);
}

TEST(LogDensity, StandardNormalPeak) {
  const GaussianMixture g = one_d({{0, 1}}, {1});
  EXPECT_NEAR(log_density(g, Vector::Zero(1)), -0.5 * std::log(2.0 * std::numbers::pi), 1e-15);
  EXPECT_NEAR(log_density(g, Vector::Zero(1)), -0.9189385332046727, 1e-15);
}

TEST(LogDensity, DuplicateComponentsCollapse) {
  const GaussianMixture one = one_d({{0.5, 2}}, {1});
  const GaussianMixture two = one_d({{0.5, 2}, {0.5, 2}}, {1, 1});
  for (double x : {-3.0, -0.1, 0.5, 4.0}) {
    EXPECT_NEAR(log_density(one, Vector::Constant(1, x)), log_density(two, Vector::Constant(1, x)), 1e-14);
  }
}

TEST(LogDensity, MatchesNaiveSum) {
  const GaussianMixture g = one_d({{-1, 0.5}, {2, 1.5}}, {0.3, 0.7});
  for (double x : {-2.0, -1.0, 0.0, 1.5, 3.0}) {
    EXPECT_NEAR(log_density(g, Vector::Constant(1, x)), naive_log_density(g, Vector::Constant(1, x)), 1e-12);
  }
}

TEST(LogDensity, FarProbesStayFinite) {
  const GaussianMixture g = ring8();
  const Vector far = Vector::Constant(2, 200.0);
  EXPECT_TRUE(std::isfinite(log_density(g, far)));
  EXPECT_TRUE(score(g, far).allFinite());
}

TEST(LogDensity, DimensionMismatch) {
  EXPECT_EQ(code_of([] { log_density(ring8(), Vector::Zero(3)); }), ErrorCode::kDimensionMismatch);
}

TEST(ExactEps, UnitGaussianFixedPoint) {
  const GaussianMixture g = one_d({{0, 1}}, {1});
  const Schedule s = Schedule::build(ScheduleKind::kLinear, 1000, 1e-4, 0.02);
  for (int t : {0, 10, 500, 999}) {
    for (double x : {-2.0, 0.3, 5.0}) {
      const double want = x * std::sqrt(1.0 - s.alpha_bar(t));
      EXPECT_NEAR(exact_eps(g, s, t, Vector::Constant(1, x))[0], want, 1e-14);
    }
  }
}

TEST(ExactEps, SymmetricMixtureVanishesAtOrigin) {
  const Schedule s = Schedule::build(ScheduleKind::kLinear, 1000, 1e-4, 0.02);
  for (int t : {0, 100, 700}) EXPECT_LT(exact_eps(ring8(), s, t, Vector::Zero(2)).norm(), 1e-13);
}

TEST(ExactEps, FiniteDifferencesOfMarginal) {
  const GaussianMixture g = one_d({{-1.5, 0.3}, {2, 0.8}}, {0.4, 0.6});
  const Schedule s = Schedule::build(ScheduleKind::kLinear, 1000, 1e-4, 0.02);
  Stream rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    const int t = static_cast<int>(rng.below(1000));
    const Vector x = testing::normal_vector(rng, 1, 2.0);
    const GaussianMixture m = marginal_at_t(g, s, t);
    const Vector fd = testing::fd_gradient([&](const Vector& y) { return naive_log_density(m, y); }, x);
    const Vector want = -std::sqrt(1.0 - s.alpha_bar(t)) * fd;
    EXPECT_LT(testing::max_rel_err(exact_eps(g, s, t, x), want), 1e-5) << "t=" << t;
  }
}

TEST(ExactEps, OneComponentMatchesClosedForm) {
  const GaussianMixture g = gaussian2d();
  const Schedule s = Schedule::build(ScheduleKind::kLinear, 1000, 1e-4, 0.02);
  Stream rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const int t = static_cast<int>(rng.below(1000));
    const Vector x = testing::normal_vector(rng, 2, 2.0);
    const Vector want = testing::gaussian_eps(g[0].mean, g[0].var, s.alpha_bar(t), x);
    EXPECT_LT((exact_eps(g, s, t, x) - want).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(ExactEps, ConditionFilterMatchesRestrictedWorld) {
  const Schedule s = Schedule::build(ScheduleKind::kLinear, 1000, 1e-4, 0.02);
  const Vector x = (Vector(2) << 1.0, 2.5).finished();
  EXPECT_EQ(exact_eps(ring8(), s, 300, x, 1, std::nullopt), exact_eps(restrict(ring8(), 1, std::nullopt), s, 300, x));
}

TEST(ExactEps, DegenerateTime) {
  EXPECT_EQ(code_of([] { exact_eps_at(ring8(), 1.0, Vector::Zero(2)); }), ErrorCode::kDegenerateTime);
}

TEST(ExactEps, BatchMatchesSingle) {
  const Schedule s = Schedule::build(ScheduleKind::kLinear, 1000, 1e-4, 0.02);
  const double ab = s.alpha_bar(250);
  const GaussianMixture m = marginal_at(ring8(), ab);
  Stream rng(4);
  Samples X(64, 2);
  for (int i = 0; i < 64; ++i) X.row(i) = testing::normal_vector(rng, 2, 3.0).transpose();
  const Samples E = marginal_eps_batch(m, ab, X);
  for (int i = 0; i < 64; ++i) {
    EXPECT_LT((E.row(i).transpose() - exact_eps_at(ring8(), ab, X.row(i).transpose())).norm(), 1e-14);
  }
}

TEST(Sample, StandardNormalMoments) {
  const GaussianMixture g = one_d({{0, 1}}, {1});
  const Samples x = sample(g, 1000, 17).x;
  const double mean = x.col(0).mean();
  const double var = (x.col(0).array() - mean).square().sum() / 999.0;
  EXPECT_LT(std::abs(mean), 0.1);
  EXPECT_LT(std::abs(var - 1.0), 0.15);
}

TEST(Sample, FilterEqualsRestrictThenSample) {
  const LabeledSamples a = sample(ring8(), 500, 23, 2, std::nullopt);
  const LabeledSamples b = sample(restrict(ring8(), 2, std::nullopt), 500, 23);
  EXPECT_EQ(a.x, b.x);
  EXPECT_EQ(a.component, b.component);
}

TEST(Sample, Deterministic) {
  EXPECT_EQ(sample(ring8(), 300, 5).x, sample(ring8(), 300, 5).x);
  EXPECT_NE(sample(ring8(), 300, 5).x, sample(ring8(), 300, 6).x);
}

TEST(Sample, PrefixStable) {
  const Samples big = sample(ring8(), 400, 5).x;
  const Samples small = sample(ring8(), 100, 5).x;
  EXPECT_EQ(big.topRows(100), small);
}

TEST(Sample, RingModeCountsConcentrate) {
  const GaussianMixture g = ring8();
  const Samples x = sample(g, 8000, 31).x;
  std::vector<int> counts(8, 0);
  for (int i = 0; i < x.rows(); ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < 8; ++k) {
      if ((x.row(i).transpose() - g[k].mean).norm() < (x.row(i).transpose() - g[best].mean).norm()) best = k;
    }
    ++counts[best];
  }
  for (int c : counts) EXPECT_NEAR(c, 1000, 150);
}

TEST(Json, RoundTripAndFile) {
  const GaussianMixture g = ring8();
  const GaussianMixture back = mixture_from_json(to_json(g));
  ASSERT_EQ(back.size(), g.size());
  for (std::size_t k = 0; k < g.size(); ++k) {
    EXPECT_EQ(back[k].mean, g[k].mean);
    EXPECT_EQ(back[k].var, g[k].var);
    EXPECT_EQ(back[k].weight, g[k].weight);
    EXPECT_EQ(back[k].coarse, g[k].coarse);
    EXPECT_EQ(back[k].fine, g[k].fine);
  }
  const auto path = std::filesystem::temp_directory_path() / "cfglab_world_test.json";
  std::ofstream(path) << to_json(gaussian2d());
  EXPECT_EQ(resolve_world(path.string())[0].mean, gaussian2d()[0].mean);
  EXPECT_THROW(mixture_from_json("{\"dim\": 2}"), Error);
  EXPECT_EQ(code_of([] { resolve_world("no_such_world_or_file"); }), ErrorCode::kIo);
}

TEST(Presets, Names) {
  for (const char* name : {"ring8", "narrow2", "gaussian2d"}) EXPECT_TRUE(preset_world(name).has_value());
  EXPECT_FALSE(preset_world("ring9").has_value());
}

}  // namespace
}  // namespace cfglab
