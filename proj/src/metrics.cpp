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

#include "cfglab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cfglab/kernels.hpp"
#include "cfglab/rng.hpp"

namespace cfglab {

double wasserstein_1d(std::vector<double> a, std::vector<double> b) {
  if (a.size() != b.size() || a.empty()) {
    fail(ErrorCode::kDimensionMismatch, "wasserstein_1d needs equal non-zero counts");
  }
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += std::abs(a[i] - b[i]);
  return acc / static_cast<double>(a.size());
}

Samples random_directions(int dim, int count, std::uint64_t seed) {
  Samples dirs(count, dim);
  Stream rng(seed ^ 0x5111CEDULL);
  for (int p = 0; p < count; ++p) {
    double norm = 0.0;
    do {
      for (int j = 0; j < dim; ++j) dirs(p, j) = rng.normal();
      norm = dirs.row(p).norm();
    } while (norm < 1e-12);
    dirs.row(p) /= norm;
  }
  return dirs;
}

double sliced_wasserstein(const Samples& a, const Samples& b, int num_projections, std::uint64_t seed) {
  check_dims(a.cols(), b.cols(), "sliced_wasserstein");
  if (num_projections < 1) fail(ErrorCode::kInvalidParameter, "sliced_wasserstein needs projections");
  const Samples dirs = random_directions(static_cast<int>(a.cols()), num_projections, seed);
  std::vector<double> per(num_projections);
#pragma omp parallel for schedule(static)
  for (int p = 0; p < num_projections; ++p) {
    const Vector pa = a * dirs.row(p).transpose();
    const Vector pb = b * dirs.row(p).transpose();
    per[p] = wasserstein_1d({pa.begin(), pa.end()}, {pb.begin(), pb.end()});
  }
  double acc = 0.0;
  for (double v : per) acc += v;
  return acc / num_projections;
}

double median_heuristic_bandwidth(const Samples& ref, Eigen::Index max_points) {
  const Eigen::Index n = std::min(ref.rows(), max_points);
  std::vector<double> d;
  d.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) d.push_back((ref.row(i) - ref.row(j)).norm());
  }
  if (d.empty()) return 1.0;
  auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  return *mid > 0.0 ? *mid : 1.0;
}

double mmd_rbf(const Samples& a, const Samples& b, double bandwidth) {
  check_dims(a.cols(), b.cols(), "mmd_rbf");
  if (!(bandwidth > 0.0)) fail(ErrorCode::kInvalidParameter, "mmd_rbf: bandwidth must be > 0");
  const double kaa = kernels::parallel::rbf_mean(a, a, bandwidth);
  const double kbb = kernels::parallel::rbf_mean(b, b, bandwidth);
  const double kab = kernels::parallel::rbf_mean(a, b, bandwidth);
  return std::max(0.0, kaa + kbb - 2.0 * kab);
}

ModeReport mode_report(const Samples& samples, const GaussianMixture& world, double radius_sigmas) {
  if (!(radius_sigmas > 0.0)) fail(ErrorCode::kInvalidParameter, "mode_report: radius must be > 0");
  check_dims(samples.cols(), world.dim(), "mode_report");
  ModeReport rep;
  rep.counts.assign(world.size(), 0);
  for (Eigen::Index i = 0; i < samples.rows(); ++i) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < world.size(); ++k) {
      const double dist = (samples.row(i).transpose() - world[k].mean).norm();
      if (dist < best_d) {
        best_d = dist;
        best = k;
      }
    }
    const double radius = radius_sigmas * std::sqrt(world[best].var.maxCoeff());
    if (best_d <= radius) {
      ++rep.counts[best];
    } else {
      ++rep.unassigned;
    }
  }
  const auto hit = std::count_if(rep.counts.begin(), rep.counts.end(), [](int c) { return c > 0; });
  rep.coverage = static_cast<double>(hit) / static_cast<double>(world.size());
  return rep;
}

MetricReport evaluate_samples(const Samples& samples, const Samples& reference,
                              const GaussianMixture& world, const MetricOptions& opts) {
  MetricReport rep;
  if (samples.cols() == 1) {
    rep.w1_exact = wasserstein_1d({samples.col(0).begin(), samples.col(0).end()},
                                  {reference.col(0).begin(), reference.col(0).end()});
  }
  rep.sliced_w = sliced_wasserstein(samples, reference, opts.projections, opts.projection_seed);
  const Eigen::Index m = std::min({samples.rows(), reference.rows(), opts.mmd_max_points});
  const Samples a = samples.topRows(m);
  const Samples b = reference.topRows(m);
  rep.mmd_bandwidth = median_heuristic_bandwidth(b);
  rep.mmd_rbf = mmd_rbf(a, b, rep.mmd_bandwidth);
  rep.modes = mode_report(samples, world, opts.radius_sigmas);
  return rep;
}

}  // namespace cfglab
