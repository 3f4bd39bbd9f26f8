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

#include <cmath>
#include <memory>

#include "cfglab/guidance.hpp"
#include "test_support.hpp"

namespace cfglab {
namespace {

using testing::normal_vector;

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

std::shared_ptr<const Schedule> linear_schedule() {
  return std::make_shared<const Schedule>(Schedule::build(ScheduleKind::kLinear, 1000, 1e-4, 0.02));
}

std::shared_ptr<const GaussianMixture> single_gaussian(const Vector& mean, const Vector& var) {
  Component c;
  c.mean = mean;
  c.var = var;
  return std::make_shared<const GaussianMixture>(std::vector<Component>{c});
}

NoiseSource oracle(std::shared_ptr<const GaussianMixture> world, std::shared_ptr<const Schedule> s,
                   Condition cond = {}, std::string label = {}) {
  return NoiseSource::oracle(std::move(world), std::move(s), cond, std::move(label));
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

TEST(Combiners, CfgHandExample) {
  const Vector out = cfg_noise(vec({0, 0}), vec({1, -1}), 2.0);
  EXPECT_EQ(out, vec({2, -2}));
}

TEST(Combiners, DualHandExample) {
  const Vector out = dual_cfg_noise(vec({0}), vec({1}), vec({3}), 1.5, 7.5);
  EXPECT_DOUBLE_EQ(out[0], 16.5);
}

TEST(Combiners, CollapseCasesAreExact) {
  Stream rng(1);
  const Vector a = normal_vector(rng, 3), b = normal_vector(rng, 3), c = normal_vector(rng, 3);
  EXPECT_EQ(cfg_noise(a, b, 1.0), b);
  EXPECT_EQ(cfg_noise(a, b, 0.0), a);
  EXPECT_EQ(replacement_cfg_noise(c, b, 1.0), cfg_noise(a, b, 1.0));
  EXPECT_EQ(dual_cfg_noise(a, b, c, 1.0, 1.0), c);
  EXPECT_EQ(dual_replacement_cfg_noise(b, a, c, 1.0, 1.0), c);
  for (double g1 : {0.5, 1.5, 4.0}) {
    EXPECT_LT((dual_cfg_noise(a, b, c, g1, 0.0) - cfg_noise(a, b, g1)).cwiseAbs().maxCoeff(), 1e-15);
  }
}

TEST(Combiners, DegenerateReplacementMatchesCfg) {
  Stream rng(2);
  const Vector u = normal_vector(rng, 2), c = normal_vector(rng, 2), c1 = normal_vector(rng, 2);
  for (double g : {-1.0, 0.5, 3.0, 7.5}) {
    EXPECT_EQ(replacement_cfg_noise(u, c, g), cfg_noise(u, c, g));
    EXPECT_EQ(dual_replacement_cfg_noise(u, c1, c, 1.5, g), dual_cfg_noise(u, c1, c, 1.5, g));
  }
}

TEST(Combiners, ReplacementDifferenceOnOracleProbe) {
  const auto s = linear_schedule();
  const auto base_world = std::make_shared<const GaussianMixture>(ring8());
  const auto ft_world = std::make_shared<const GaussianMixture>(narrow2());
  const NoiseSource base = oracle(base_world, s);
  const NoiseSource ft_uncond = oracle(ft_world, s);
  const NoiseSource ft_cond = oracle(ft_world, s, {kNullLabel, 1});
  const Vector x = vec({1.3, -0.4});
  const int t = 400;
  const Vector e_psi = base.evaluate(x, t), e_ft = ft_uncond.evaluate(x, t), e_c = ft_cond.evaluate(x, t);
  const double g = 3.0;
  const Vector diff = cfg_noise(e_ft, e_c, g) - replacement_cfg_noise(e_psi, e_c, g);
  EXPECT_LT((diff - (1.0 - g) * (e_ft - e_psi)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_GT(diff.norm(), 1e-3);
}

TEST(Combiners, DualReplacementDifferenceOnRandomVectors) {
  Stream rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const Vector e00 = normal_vector(rng, 4), e10 = normal_vector(rng, 4), e11 = normal_vector(rng, 4);
    const Vector epsi = normal_vector(rng, 4);
    const double g1 = 3.0 * rng.uniform(), g2 = 8.0 * rng.uniform();
    const Vector diff = dual_cfg_noise(e00, e10, e11, g1, g2) - dual_replacement_cfg_noise(epsi, e10, e11, g1, g2);
    EXPECT_LT((diff - (1.0 - g1) * (e00 - epsi)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Combiners, AffineInEachArgument) {
  Stream rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const double g = 6.0 * rng.uniform() - 1.0, g1 = 3.0 * rng.uniform(), g2 = 8.0 * rng.uniform();
    const double lam = rng.normal();
    Vector v[3], w[3];
    for (int i = 0; i < 3; ++i) {
      v[i] = normal_vector(rng, 3);
      w[i] = normal_vector(rng, 3);
    }
    auto close = [](const Vector& a, const Vector& b) { return (a - b).cwiseAbs().maxCoeff() < 1e-12; };
    // f(lam v + (1 - lam) w) == lam f(v) + (1 - lam) f(w), one argument at a time.
    for (int k = 0; k < 2; ++k) {
      Vector m[2] = {v[0], v[1]}, n[2] = {v[0], v[1]};
      m[k] = lam * v[k] + (1.0 - lam) * w[k];
      n[k] = w[k];
      EXPECT_TRUE(close(cfg_noise(m[0], m[1], g), lam * cfg_noise(v[0], v[1], g) + (1.0 - lam) * cfg_noise(n[0], n[1], g)));
      EXPECT_TRUE(close(replacement_cfg_noise(m[0], m[1], g),
                        lam * replacement_cfg_noise(v[0], v[1], g) + (1.0 - lam) * replacement_cfg_noise(n[0], n[1], g)));
    }
    for (int k = 0; k < 3; ++k) {
      Vector m[3] = {v[0], v[1], v[2]}, n[3] = {v[0], v[1], v[2]};
      m[k] = lam * v[k] + (1.0 - lam) * w[k];
      n[k] = w[k];
      EXPECT_TRUE(close(dual_cfg_noise(m[0], m[1], m[2], g1, g2),
                        lam * dual_cfg_noise(v[0], v[1], v[2], g1, g2) + (1.0 - lam) * dual_cfg_noise(n[0], n[1], n[2], g1, g2)));
      EXPECT_TRUE(close(dual_replacement_cfg_noise(m[0], m[1], m[2], g1, g2),
                        lam * dual_replacement_cfg_noise(v[0], v[1], v[2], g1, g2) +
                            (1.0 - lam) * dual_replacement_cfg_noise(n[0], n[1], n[2], g1, g2)));
    }
  }
}

TEST(Combiners, WorkOnBatches) {
  Samples a = Samples::Zero(3, 2), b = Samples::Ones(3, 2);
  const Samples out = cfg_noise(a, b, 2.5);
  EXPECT_EQ(out, Samples::Constant(3, 2, 2.5));
}

TEST(Combiners, DimensionMismatch) {
  EXPECT_EQ(code_of([] { cfg_noise(vec({1, 2}), vec({1}), 2.0); }), ErrorCode::kDimensionMismatch);
  EXPECT_EQ(code_of([] { dual_cfg_noise(vec({1}), vec({1}), vec({1, 2}), 1.0, 2.0); }), ErrorCode::kDimensionMismatch);
}

GuidanceSpec cfg_spec(NoiseSource uncond, NoiseSource cond, double gamma) {
  GuidanceSpec spec;
  spec.mode = GuidanceMode::kCfg;
  spec.gamma = gamma;
  spec.sources.emplace("uncond", std::move(uncond));
  spec.sources.emplace("cond", std::move(cond));
  return spec;
}

// Score of N(M, V) at x, times -sqrt(1 - ab): the eps an oracle for that
// time-t marginal would return.
Vector eps_of_marginal(const Vector& M, const Vector& V, double ab, const Vector& x) {
  return (std::sqrt(1.0 - ab) * (x - M).array() / V.array()).matrix();
}

TEST(GammaPowered, EqualVarianceGaussians) {
  const auto s = linear_schedule();
  const Vector var = vec({0.4, 0.9});
  const Vector mu = vec({-1.0, 0.5}), mc = vec({2.0, 1.5});
  const auto wu = single_gaussian(mu, var), wc = single_gaussian(mc, var);
  Stream rng(5);
  for (double g : {0.5, 1.0, 2.0, 5.0}) {
    const GuidanceSpec spec = cfg_spec(oracle(wu, s, {}, "u"), oracle(wc, s, {}, "c"), g);
    for (int trial = 0; trial < 10; ++trial) {
      const int t = static_cast<int>(rng.below(1000));
      const double ab = s->alpha_bar(t);
      const Vector x = normal_vector(rng, 2, 2.0);
      const Vector V = (ab * var.array() + 1.0 - ab).matrix();
      const Vector M = std::sqrt(ab) * ((1.0 - g) * mu + g * mc);
      EXPECT_LT((guided_eps(spec, x, t) - eps_of_marginal(M, V, ab, x)).cwiseAbs().maxCoeff(), 1e-9);
    }
  }
}

TEST(GammaPowered, UnequalVarianceGaussians) {
  const auto s = linear_schedule();
  const Vector vu = vec({1.5, 0.7}), vc = vec({0.3, 0.5});
  const Vector mu = vec({0.0, -1.0}), mc = vec({1.0, 2.0});
  const auto wu = single_gaussian(mu, vu), wc = single_gaussian(mc, vc);
  Stream rng(6);
  int checked = 0;
  for (double g : {0.5, 1.0, 2.0, 5.0}) {
    const GuidanceSpec spec = cfg_spec(oracle(wu, s, {}, "u"), oracle(wc, s, {}, "c"), g);
    for (int trial = 0; trial < 20; ++trial) {
      const int t = static_cast<int>(rng.below(1000));
      const double ab = s->alpha_bar(t);
      const Vector Vu = (ab * vu.array() + 1.0 - ab).matrix(), Vc = (ab * vc.array() + 1.0 - ab).matrix();
      const Vector prec = ((1.0 - g) / Vu.array() + g / Vc.array()).matrix();
      if ((prec.array() <= 0.0).any()) continue;
      const Vector V = prec.cwiseInverse();
      const Vector M = (V.array() * ((1.0 - g) * std::sqrt(ab) * mu.array() / Vu.array() +
                                     g * std::sqrt(ab) * mc.array() / Vc.array()))
                           .matrix();
      const Vector x = normal_vector(rng, 2, 2.0);
      EXPECT_LT(testing::max_rel_err(guided_eps(spec, x, t), eps_of_marginal(M, V, ab, x), 1e-9), 1e-9);
      ++checked;
    }
  }
  EXPECT_GT(checked, 40);
}

TEST(TimeAnnealed, ReplacementMatchesMixedLogDensityGradient) {
  const auto s = linear_schedule();
  const auto base_world = std::make_shared<const GaussianMixture>(ring8());
  const auto ft_world = std::make_shared<const GaussianMixture>(narrow2());
  GuidanceSpec spec;
  spec.mode = GuidanceMode::kReplacementCfg;
  spec.sources.emplace("base_uncond", oracle(base_world, s, {}, "base"));
  spec.sources.emplace("cond", oracle(ft_world, s, {kNullLabel, 0}, "ft"));
  const GaussianMixture cond_world = restrict(*ft_world, std::nullopt, 0);
  Stream rng(7);
  for (double g : {2.0, 3.0, 5.0}) {
    spec.gamma = g;
    for (int trial = 0; trial < 15; ++trial) {
      const int t = 200 + static_cast<int>(rng.below(800));
      const double ab = s->alpha_bar(t);
      const GaussianMixture pu = marginal_at(*base_world, ab), pc = marginal_at(cond_world, ab);
      const Vector x = normal_vector(rng, 2, 1.5);
      auto mixed = [&](const Vector& y) { return (1.0 - g) * log_density(pu, y) + g * log_density(pc, y); };
      const Vector expected = -std::sqrt(1.0 - ab) * testing::fd_gradient(mixed, x, 1e-5);
      EXPECT_LT(testing::max_rel_err(guided_eps(spec, x, t), expected, 1e-6), 1e-4) << "t=" << t << " g=" << g;
    }
  }
}

TEST(GuidedEps, SameSourceGivesThatSourceForAnyGamma) {
  const auto s = linear_schedule();
  const auto w = std::make_shared<const GaussianMixture>(ring8());
  const NoiseSource src = oracle(w, s, {1, kNullLabel});
  const Vector x = vec({0.7, 2.0});
  for (double g : {0.0, 1.0, 3.0, 7.5}) {
    const GuidanceSpec spec = cfg_spec(src, src, g);
    EXPECT_LT((guided_eps(spec, x, 300) - src.evaluate(x, 300)).cwiseAbs().maxCoeff(), 1e-15);
  }
}

TEST(GuidedEps, GammaOneIdentityAcrossModes) {
  Architecture a = testing::tiny_arch();
  auto base = std::make_shared<const Denoiser>(testing::random_net(a, 1));
  auto ft = std::make_shared<const Denoiser>(testing::random_net(a, 2));
  GuidanceSpec cfg = cfg_spec(NoiseSource::network(ft, {}, "ft"), NoiseSource::network(ft, {kNullLabel, 2}, "ft"), 1.0);
  GuidanceSpec rep;
  rep.mode = GuidanceMode::kReplacementCfg;
  rep.gamma = 1.0;
  rep.sources.emplace("base_uncond", NoiseSource::network(base, {}, "base"));
  rep.sources.emplace("cond", NoiseSource::network(ft, {kNullLabel, 2}, "ft"));
  Stream rng(8);
  Samples x(64, 2);
  for (int i = 0; i < 64; ++i) x.row(i) = normal_vector(rng, 2, 3.0).transpose();
  for (int t : {0, 17, 49}) EXPECT_EQ(guided_eps(cfg, x, t).eps, guided_eps(rep, x, t).eps);
}

TEST(GuidedEps, EvaluatesEachDistinctSourceOnce) {
  const auto s = linear_schedule();
  const auto w = std::make_shared<const GaussianMixture>(ring8());
  const Samples x = Samples::Zero(4, 2);
  const NoiseSource u = oracle(w, s, {}, "w");
  EXPECT_EQ(guided_eps(cfg_spec(u, u, 3.0), x, 10).evaluations, 1);
  EXPECT_EQ(guided_eps(cfg_spec(u, oracle(w, s, {}, "w"), 3.0), x, 10).evaluations, 1);
  EXPECT_EQ(guided_eps(cfg_spec(u, oracle(w, s, {0, 0}, "w"), 3.0), x, 10).evaluations, 2);

  GuidanceSpec dual;
  dual.mode = GuidanceMode::kDualReplacementCfg;
  dual.gamma1 = 1.5;
  dual.gamma2 = 3.0;
  dual.sources.emplace("base_uncond", oracle(std::make_shared<const GaussianMixture>(narrow2()), s, {}, "n"));
  dual.sources.emplace("cond10", oracle(w, s, {0, kNullLabel}, "w"));
  dual.sources.emplace("cond11", oracle(w, s, {0, 0}, "w"));
  EXPECT_EQ(guided_eps(dual, x, 10).evaluations, 3);
}

TEST(GuidedEps, IntervalMaskFallsBackToConditional) {
  const auto s = linear_schedule();
  const auto w = std::make_shared<const GaussianMixture>(ring8());
  const NoiseSource u = oracle(w, s), c = oracle(w, s, {2, 6});
  GuidanceSpec spec = cfg_spec(u, c, 4.0);
  spec.interval = std::pair{100, 200};
  const Vector x = vec({-0.5, 1.1});
  for (int t : {0, 99, 201, 999}) {
    Samples xs = x.transpose();
    const GuidedNoise g = guided_eps(spec, xs, t);
    EXPECT_EQ(g.evaluations, 1);
    EXPECT_EQ(Vector(g.eps.row(0).transpose()), c.evaluate(x, t));
  }
  for (int t : {100, 150, 200}) {
    EXPECT_EQ(guided_eps(spec, x, t), cfg_noise(u.evaluate(x, t), c.evaluate(x, t), 4.0));
  }
}

TEST(GuidedEps, Validation) {
  const auto s = linear_schedule();
  const auto w = std::make_shared<const GaussianMixture>(ring8());
  const Vector x = Vector::Zero(2);
  GuidanceSpec missing;
  missing.mode = GuidanceMode::kReplacementCfg;
  missing.sources.emplace("cond", oracle(w, s));
  EXPECT_EQ(code_of([&] { guided_eps(missing, x, 0); }), ErrorCode::kInvalidConfig);

  GuidanceSpec nan_gamma = cfg_spec(oracle(w, s), oracle(w, s), std::nan(""));
  EXPECT_EQ(code_of([&] { validate(nan_gamma); }), ErrorCode::kInvalidConfig);

  GuidanceSpec inf_gamma2 = cfg_spec(oracle(w, s), oracle(w, s), 1.0);
  inf_gamma2.gamma2 = INFINITY;
  EXPECT_EQ(code_of([&] { validate(inf_gamma2); }), ErrorCode::kInvalidConfig);

  GuidanceSpec bad_interval = cfg_spec(oracle(w, s), oracle(w, s), 2.0);
  bad_interval.interval = std::pair{5, 4};
  EXPECT_EQ(code_of([&] { validate(bad_interval); }), ErrorCode::kInvalidConfig);

  const auto one_d = single_gaussian(vec({0.0}), vec({1.0}));
  GuidanceSpec dims = cfg_spec(oracle(one_d, s), oracle(w, s), 2.0);
  EXPECT_EQ(code_of([&] { validate(dims); }), ErrorCode::kDimensionMismatch);

  EXPECT_EQ(code_of([] { parse_guidance_mode("negative_cfg"); }), ErrorCode::kInvalidConfig);
}

TEST(GuidedEps, ModeNamesRoundTrip) {
  for (GuidanceMode m : {GuidanceMode::kCfg, GuidanceMode::kReplacementCfg, GuidanceMode::kDualCfg,
                         GuidanceMode::kDualReplacementCfg}) {
    EXPECT_EQ(parse_guidance_mode(to_string(m)), m);
  }
  EXPECT_TRUE(is_dual(GuidanceMode::kDualCfg));
  EXPECT_FALSE(is_dual(GuidanceMode::kReplacementCfg));
}

TEST(GuidedEps, ReplacementWithOracleBaseIsTotalOnProbeGrid) {
  const auto s = linear_schedule();
  Architecture a;
  auto ft = std::make_shared<const Denoiser>(testing::random_net(a, 9));
  GuidanceSpec spec;
  spec.mode = GuidanceMode::kReplacementCfg;
  spec.gamma = 5.0;
  spec.sources.emplace("base_uncond", oracle(std::make_shared<const GaussianMixture>(ring8()), s));
  spec.sources.emplace("cond", NoiseSource::network(ft, {kNullLabel, 1}, "ft"));
  Samples grid(100, 2);
  for (int i = 0; i < 10; ++i) {
    for (int j = 0; j < 10; ++j) grid.row(10 * i + j) << -6.0 + 12.0 * i / 9.0, -6.0 + 12.0 * j / 9.0;
  }
  for (int t : {0, 1, 500, 999}) {
    const Samples e = guided_eps(spec, grid, t).eps;
    EXPECT_EQ(e.rows(), 100);
    EXPECT_EQ(e.cols(), 2);
    EXPECT_TRUE(e.allFinite()) << "t=" << t;
  }
}

TEST(GuidedEps, DescribeDistinguishesSpecs) {
  const auto s = linear_schedule();
  const auto w = std::make_shared<const GaussianMixture>(ring8());
  const GuidanceSpec a = cfg_spec(oracle(w, s, {}, "w"), oracle(w, s, {0, 0}, "w"), 2.0);
  GuidanceSpec b = a;
  b.gamma = 3.0;
  GuidanceSpec c = a;
  c.interval = std::pair{0, 10};
  EXPECT_EQ(describe(a), describe(cfg_spec(oracle(w, s, {}, "w"), oracle(w, s, {0, 0}, "w"), 2.0)));
  EXPECT_NE(describe(a), describe(b));
  EXPECT_NE(describe(a), describe(c));
}

}  // namespace
}  // namespace cfglab
