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

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include "cfglab/common.hpp"
#include "cfglab/denoiser.hpp"
#include "cfglab/gmm.hpp"
#include "cfglab/schedule.hpp"

namespace cfglab {

// Guided-noise combiners. All are affine in every epsilon argument and work on
// a single vector or a row-per-sample batch alike.

// Each combiner is evaluated in its weighted-sum form so that the collapse
// cases (gamma = 0 or 1, gamma1 = gamma2 = 1) return one argument bit for bit.

/// eps_u + gamma (eps_c - eps_u).
template <class M>
M cfg_noise(const M& eps_uncond, const M& eps_cond, double gamma) {
  check_dims(eps_uncond.rows(), eps_cond.rows(), "cfg_noise");
  check_dims(eps_uncond.cols(), eps_cond.cols(), "cfg_noise");
  return (1.0 - gamma) * eps_uncond + gamma * eps_cond;
}

/// cfg_noise with the base model's unconditional prediction in place of the
/// fine-tuned one.
template <class M>
M replacement_cfg_noise(const M& eps_uncond_base, const M& eps_cond_ft, double gamma) {
  return cfg_noise(eps_uncond_base, eps_cond_ft, gamma);
}

/// eps_00 + g1 (eps_10 - eps_00) + g2 (eps_11 - eps_10).
template <class M>
M dual_cfg_noise(const M& eps_00, const M& eps_10, const M& eps_11, double gamma1, double gamma2) {
  check_dims(eps_00.rows(), eps_10.rows(), "dual_cfg_noise");
  check_dims(eps_00.cols(), eps_10.cols(), "dual_cfg_noise");
  check_dims(eps_11.rows(), eps_10.rows(), "dual_cfg_noise");
  check_dims(eps_11.cols(), eps_10.cols(), "dual_cfg_noise");
  return (1.0 - gamma1) * eps_00 + (gamma1 - gamma2) * eps_10 + gamma2 * eps_11;
}

/// Only the doubly-unconditional term comes from the base model; eps_10 is
/// still the fine-tuned model's.
template <class M>
M dual_replacement_cfg_noise(const M& eps_base_uncond, const M& eps_10, const M& eps_11,
                             double gamma1, double gamma2) {
  return dual_cfg_noise(eps_base_uncond, eps_10, eps_11, gamma1, gamma2);
}

/// A network or an analytic oracle queried at one condition.
class NoiseSource {
 public:
  enum class Kind { kNetwork, kOracle };

  /// `label` names the network in descriptors and digests.
  static NoiseSource network(std::shared_ptr<const Denoiser> net, Condition cond,
                             std::string label = {});
  /// Exact eps of `world` restricted to `cond` (null slots do not filter).
  static NoiseSource oracle(std::shared_ptr<const GaussianMixture> world,
                            std::shared_ptr<const Schedule> schedule, Condition cond,
                            std::string label = {});

  Kind kind() const { return kind_; }
  const Condition& condition() const { return cond_; }
  const Denoiser* net() const { return net_.get(); }
  const GaussianMixture* world() const { return world_.get(); }
  int dim() const;

  /// Equal keys denote the same function of (x_t, t).
  std::string key() const;
  /// Human/digest form, e.g. "network:ft@1f2e...:coarse=-1,fine=0".
  std::string describe() const;

  Samples evaluate(const Samples& x_t, int t) const;
  Vector evaluate(const Vector& x_t, int t) const;

 private:
  Kind kind_ = Kind::kNetwork;
  std::shared_ptr<const Denoiser> net_;
  std::shared_ptr<const GaussianMixture> world_;  // already restricted
  std::shared_ptr<const Schedule> schedule_;
  Condition cond_;
  std::string label_;
  std::string fingerprint_;
};

enum class GuidanceMode { kCfg, kReplacementCfg, kDualCfg, kDualReplacementCfg };

std::string_view to_string(GuidanceMode mode);
GuidanceMode parse_guidance_mode(std::string_view s);
bool is_dual(GuidanceMode mode);

/// Required source names per mode:
///   cfg                  uncond, cond
///   replacement_cfg      base_uncond, cond
///   dual_cfg             uncond00, cond10, cond11
///   dual_replacement_cfg base_uncond, cond10, cond11
struct GuidanceSpec {
  GuidanceMode mode = GuidanceMode::kCfg;
  double gamma = 1.0;
  double gamma1 = 1.0;
  double gamma2 = 1.0;
  std::map<std::string, NoiseSource> sources;
  /// Guidance applies for t in [lo, hi]; elsewhere the conditional source's
  /// eps is used as is. Unset means every step.
  std::optional<std::pair<int, int>> interval;
};

/// kInvalidConfig when a source is missing, gammas are not finite, or source
/// dimensions disagree.
void validate(const GuidanceSpec& spec);

struct GuidedNoise {
  Samples eps;
  int evaluations = 0;  // distinct source evaluations performed
};

/// Evaluates each distinct source once at (x_t, t) and applies the combiner.
GuidedNoise guided_eps(const GuidanceSpec& spec, const Samples& x_t, int t);
Vector guided_eps(const GuidanceSpec& spec, const Vector& x_t, int t);

/// Canonical text used in run digests.
std::string describe(const GuidanceSpec& spec);

}  // namespace cfglab
