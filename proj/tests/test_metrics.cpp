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

#include "cfglab/metrics.hpp"
#include "test_support.hpp"

namespace cfglab {
namespace {

Samples normals(int n, int d, std::uint64_t seed, double shift = 0.0) {
  Stream rng(seed);
  Samples x(n, d);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) x(i, j) = rng.normal() + shift;
  }
  return x;
}

Samples column(std::initializer_list<double> v) {
  Samples x(static_cast<Eigen::Index>(v.size()), 1);
  Eigen::Index i = 0;
  for (double e : v) x(i++, 0) = e;
  return x;
}

std::vector<double> as_vector(const Samples& x) { return {x.col(0).begin(), x.col(0).end()}; }

TEST(Wasserstein1d, Examples) {
  EXPECT_EQ(wasserstein_1d({0.5, -1.0, 2.0}, {2.0, 0.5, -1.0}), 0.0);
  EXPECT_DOUBLE_EQ(wasserstein_1d({0.0}, {3.0}), 3.0);
  EXPECT_DOUBLE_EQ(wasserstein_1d({0.0, 1.0}, {1.0, 2.0}), 1.0);
  EXPECT_DOUBLE_EQ(wasserstein_1d({1.0, 0.0}, {2.0, 1.0}), 1.0);
}

TEST(Wasserstein1d, Errors) {
  EXPECT_THROW(wasserstein_1d({0.0, 1.0}, {1.0}), Error);
  EXPECT_THROW(wasserstein_1d({}, {}), Error);
}

TEST(Wasserstein1d, SymmetricAndMonotoneInShift) {
  const std::vector<double> a = as_vector(normals(500, 1, 1)), b = as_vector(normals(500, 1, 2));
  EXPECT_EQ(wasserstein_1d(a, b), wasserstein_1d(b, a));
  double prev = 0.0;
  for (double shift = 0.0; shift <= 3.0; shift += 0.25) {
    std::vector<double> moved = b;
    for (double& v : moved) v += shift;
    const double w = wasserstein_1d(a, moved);
    EXPECT_GE(w, prev);
    prev = w;
  }
}

TEST(SlicedWasserstein, IdenticalSetsGiveZero) {
  const Samples a = normals(300, 3, 4);
  EXPECT_EQ(sliced_wasserstein(a, a, 64, 9), 0.0);
}

TEST(SlicedWasserstein, OneDimensionEqualsExactW1) {
  const Samples a = normals(400, 1, 5), b = normals(400, 1, 6, 0.7);
  const double w1 = wasserstein_1d(as_vector(a), as_vector(b));
  for (std::uint64_t seed : {0, 1, 77}) EXPECT_NEAR(sliced_wasserstein(a, b, 16, seed), w1, 1e-12);
}

TEST(SlicedWasserstein, NullCalibrationTwoNormals) {
  const Samples a = normals(4000, 2, 10), b = normals(4000, 2, 11);
  EXPECT_LT(sliced_wasserstein(a, b, 64, 0), 0.08);
}

TEST(SlicedWasserstein, SymmetricAndDeterministic) {
  const Samples a = normals(200, 2, 12), b = normals(200, 2, 13, 1.0);
  EXPECT_EQ(sliced_wasserstein(a, b, 64, 3), sliced_wasserstein(b, a, 64, 3));
  EXPECT_EQ(sliced_wasserstein(a, b, 64, 3), sliced_wasserstein(a, b, 64, 3));
}

TEST(SlicedWasserstein, Errors) {
  EXPECT_THROW(sliced_wasserstein(normals(10, 2, 1), normals(10, 3, 1), 8, 0), Error);
  EXPECT_THROW(sliced_wasserstein(normals(10, 2, 1), normals(10, 2, 2), 0, 0), Error);
}

TEST(RandomDirections, UnitNorm) {
  const Samples d = random_directions(3, 50, 4);
  ASSERT_EQ(d.rows(), 50);
  for (int i = 0; i < 50; ++i) EXPECT_NEAR(d.row(i).norm(), 1.0, 1e-12);
  const Samples one = random_directions(1, 20, 4);
  for (int i = 0; i < 20; ++i) EXPECT_EQ(std::abs(one(i, 0)), 1.0);
}

TEST(Mmd, IdenticalSetsGiveZero) {
  const Samples a = normals(100, 2, 14);
  EXPECT_NEAR(mmd_rbf(a, a, 0.8), 0.0, 1e-12);
}

TEST(Mmd, SinglePointClosedForm) {
  Samples a(1, 2), b(1, 2);
  a << 0.3, -1.0;
  b << 1.1, 0.5;
  const double h = 0.7;
  const double expected = 2.0 - 2.0 * std::exp(-(a.row(0) - b.row(0)).squaredNorm() / (2.0 * h * h));
  EXPECT_NEAR(mmd_rbf(a, b, h), expected, 1e-14);
}

TEST(Mmd, ThreePointNaiveDoubleSum) {
  Samples a(3, 2), b(3, 2);
  a << 0.0, 0.0, 1.0, 0.5, -0.3, 2.0;
  b << 0.2, -0.1, 1.5, 1.5, -2.0, 0.4;
  const double h = 1.3;
  auto k = [&](const Samples& p, int i, const Samples& q, int j) {
    return std::exp(-(p.row(i) - q.row(j)).squaredNorm() / (2.0 * h * h));
  };
  double aa = 0.0, bb = 0.0, ab = 0.0;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      aa += k(a, i, a, j);
      bb += k(b, i, b, j);
      ab += k(a, i, b, j);
    }
  }
  EXPECT_NEAR(mmd_rbf(a, b, h), (aa + bb - 2.0 * ab) / 9.0, 1e-12);
  EXPECT_NEAR(mmd_rbf(b, a, h), mmd_rbf(a, b, h), 1e-15);
}

TEST(Mmd, RejectsBadBandwidth) {
  const Samples a = normals(3, 2, 1);
  EXPECT_THROW(mmd_rbf(a, a, 0.0), Error);
  EXPECT_THROW(mmd_rbf(a, a, std::nan("")), Error);
}

TEST(Mmd, MedianHeuristicOnHandSet) {
  // Pairwise distances 1, 2, 3: median 2.
  EXPECT_DOUBLE_EQ(median_heuristic_bandwidth(column({0.0, 1.0, 3.0})), 2.0);
}

TEST(ModeReport, SamplesAtMeans) {
  const GaussianMixture world = ring8();
  Samples at(8, 2);
  for (int k = 0; k < 8; ++k) at.row(k) = world[k].mean.transpose();
  const ModeReport all = mode_report(at, world, 4.0);
  EXPECT_EQ(all.coverage, 1.0);
  EXPECT_EQ(all.unassigned, 0);
  for (int c : all.counts) EXPECT_EQ(c, 1);

  Samples one(5, 2);
  for (int i = 0; i < 5; ++i) one.row(i) = world[3].mean.transpose();
  const ModeReport single = mode_report(one, world, 4.0);
  EXPECT_DOUBLE_EQ(single.coverage, 1.0 / 8.0);
  EXPECT_EQ(single.counts[3], 5);
}

TEST(ModeReport, FarSamplesUnassigned) {
  Samples x(2, 2);
  x << 0.0, 0.0, 20.0, 20.0;
  const ModeReport r = mode_report(x, ring8(), 4.0);
  EXPECT_EQ(r.unassigned, 2);
  EXPECT_EQ(r.coverage, 0.0);
  EXPECT_THROW(mode_report(x, ring8(), 0.0), Error);
}

TEST(ModeReport, Ring8OracleSamples) {
  const GaussianMixture world = ring8();
  const Samples x = sample(world, 8000, 21).x;
  const ModeReport r = mode_report(x, world, 4.0);
  EXPECT_EQ(r.coverage, 1.0);
  EXPECT_LT(r.unassigned, 0.02 * 8000);
  int total = r.unassigned;
  for (int c : r.counts) total += c;
  EXPECT_EQ(total, 8000);
}

TEST(EvaluateSamples, ReportIsFiniteAndConsistent) {
  const GaussianMixture world = ring8();
  const Samples ref = sample(world, 1000, 1).x, x = sample(world, 1000, 2).x;
  const MetricReport r = evaluate_samples(x, ref, world);
  EXPECT_FALSE(r.w1_exact.has_value());
  EXPECT_GE(r.sliced_w, 0.0);
  EXPECT_GE(r.mmd_rbf, 0.0);
  EXPECT_GT(r.mmd_bandwidth, 0.0);
  EXPECT_TRUE(std::isfinite(r.sliced_w) && std::isfinite(r.mmd_rbf));
  EXPECT_EQ(r.modes.coverage, 1.0);

  Component c;
  c.mean = Vector::Zero(1);
  c.var = Vector::Ones(1);
  const GaussianMixture line({c});
  const Samples a = normals(300, 1, 3), b = normals(300, 1, 4);
  const MetricReport r1 = evaluate_samples(a, b, line);
  ASSERT_TRUE(r1.w1_exact.has_value());
  EXPECT_NEAR(*r1.w1_exact, r1.sliced_w, 1e-12);
}

}  // namespace
}  // namespace cfglab
