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
#include <string>
#include <string_view>
#include <vector>

#include "cfglab/common.hpp"
#include "cfglab/schedule.hpp"

namespace cfglab {

/// Condition filter slot: nullopt matches every component.
using LabelFilter = std::optional<int>;

struct Component {
  double weight = 1.0;
  Vector mean;
  Vector var;  // diagonal, strictly positive
  int coarse = 0;
  int fine = 0;
};

/// Labeled mixture of diagonal Gaussians. Weights are normalized on
/// construction; the object is immutable afterwards.
class GaussianMixture {
 public:
  explicit GaussianMixture(std::vector<Component> components);

  int dim() const { return dim_; }
  std::size_t size() const { return components_.size(); }
  const std::vector<Component>& components() const { return components_; }
  const Component& operator[](std::size_t k) const { return components_[k]; }

  /// One past the largest label value present.
  int coarse_vocab() const;
  int fine_vocab() const;

 private:
  std::vector<Component> components_;
  int dim_ = 0;
};

bool matches(const Component& c, LabelFilter coarse, LabelFilter fine);

/// Total (normalized) weight of the components passing the filter.
double retained_weight(const GaussianMixture& gmm, LabelFilter coarse, LabelFilter fine);

/// Matching components, renormalized. kEmptyCondition when none match.
GaussianMixture restrict(const GaussianMixture& gmm, LabelFilter coarse, LabelFilter fine);

/// Weighted union of two mixtures of the same dimension.
GaussianMixture merge(const GaussianMixture& a, double weight_a, const GaussianMixture& b,
                      double weight_b);

/// Law of x_t when x0 ~ gmm: means scale by sqrt(ab), variances map to ab v + (1 - ab).
GaussianMixture marginal_at(const GaussianMixture& gmm, double alpha_bar);
GaussianMixture marginal_at_t(const GaussianMixture& gmm, const Schedule& schedule, int t);

double log_density(const GaussianMixture& gmm, const Vector& x);

/// Gradient of log density in x, from posterior responsibilities.
Vector score(const GaussianMixture& gmm, const Vector& x);

/// Exact noise prediction -sqrt(1 - ab) * grad log p_t(x_t | filter). ab must be < 1.
Vector exact_eps_at(const GaussianMixture& gmm, double alpha_bar, const Vector& x_t,
                    LabelFilter coarse = std::nullopt, LabelFilter fine = std::nullopt);
Vector exact_eps(const GaussianMixture& gmm, const Schedule& schedule, int t, const Vector& x_t,
                 LabelFilter coarse = std::nullopt, LabelFilter fine = std::nullopt);

/// Row-wise exact_eps for an already-noised marginal (no restriction).
Samples marginal_eps_batch(const GaussianMixture& marginal, double alpha_bar, const Samples& x);

struct LabeledSamples {
  Samples x;
  std::vector<int> component;  // index into the (restricted) mixture
};

/// I.i.d. ancestral draws; draw i uses Stream::derive(seed, i).
LabeledSamples sample(const GaussianMixture& gmm, int n, std::uint64_t seed,
                      LabelFilter coarse = std::nullopt, LabelFilter fine = std::nullopt);

// Presets and serialization.

/// 8 equal-weight modes on a circle of radius 4, variance 0.05;
/// coarse = k mod 4, fine = k.
GaussianMixture ring8();
/// Modes {0, 1} of ring8 with their labels.
GaussianMixture narrow2();
/// Single diagonal Gaussian N((1, -0.5), diag(0.3, 0.6)), labels (0, 0).
GaussianMixture gaussian2d();

/// Known preset names: ring8, narrow2, gaussian2d.
std::optional<GaussianMixture> preset_world(std::string_view name);

std::string to_json(const GaussianMixture& gmm);
GaussianMixture mixture_from_json(std::string_view text);

/// A preset name, or a path to a JSON mixture file.
GaussianMixture resolve_world(const std::string& name_or_path);

}  // namespace cfglab
