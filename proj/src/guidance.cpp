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

#include "cfglab/guidance.hpp"

#include <cmath>
#include <vector>

#include "cfglab/kernels.hpp"

namespace cfglab {

namespace {

std::string condition_text(const Condition& c) {
  return "coarse=" + std::to_string(c.coarse) + ",fine=" + std::to_string(c.fine);
}

LabelFilter filter_of(int label) {
  return label == kNullLabel ? LabelFilter{} : LabelFilter{label};
}

std::vector<std::string> required_sources(GuidanceMode mode) {
  switch (mode) {
    case GuidanceMode::kCfg: return {"uncond", "cond"};
    case GuidanceMode::kReplacementCfg: return {"base_uncond", "cond"};
    case GuidanceMode::kDualCfg: return {"uncond00", "cond10", "cond11"};
    case GuidanceMode::kDualReplacementCfg: return {"base_uncond", "cond10", "cond11"};
  }
  return {};
}

}  // namespace

NoiseSource NoiseSource::network(std::shared_ptr<const Denoiser> net, Condition cond,
                                 std::string label) {
  if (!net) fail(ErrorCode::kInvalidParameter, "network source without a network");
  net->coarse_row(cond.coarse);
  net->fine_row(cond.fine);
  NoiseSource s;
  s.kind_ = Kind::kNetwork;
  s.fingerprint_ = net->fingerprint();
  s.net_ = std::move(net);
  s.cond_ = cond;
  s.label_ = label.empty() ? "net" : std::move(label);
  return s;
}

NoiseSource NoiseSource::oracle(std::shared_ptr<const GaussianMixture> world,
                                std::shared_ptr<const Schedule> schedule, Condition cond,
                                std::string label) {
  if (!world || !schedule) fail(ErrorCode::kInvalidParameter, "oracle source needs world and schedule");
  NoiseSource s;
  s.kind_ = Kind::kOracle;
  s.world_ = std::make_shared<const GaussianMixture>(
      restrict(*world, filter_of(cond.coarse), filter_of(cond.fine)));
  s.schedule_ = std::move(schedule);
  s.cond_ = cond;
  s.label_ = label.empty() ? "world" : std::move(label);
  Fnv1a h;
  h.update(to_json(*s.world_));
  h.update(s.schedule_->alpha_bars().data(), s.schedule_->alpha_bars().size() * sizeof(double));
  s.fingerprint_ = h.hex();
  return s;
}

int NoiseSource::dim() const { return kind_ == Kind::kNetwork ? net_->arch().dim : world_->dim(); }

std::string NoiseSource::key() const {
  return (kind_ == Kind::kNetwork ? "network:" : "oracle:") + fingerprint_ + ":" +
         condition_text(cond_);
}

std::string NoiseSource::describe() const {
  return (kind_ == Kind::kNetwork ? "network:" : "oracle:") + label_ + "@" + fingerprint_ + ":" +
         condition_text(cond_);
}

Samples NoiseSource::evaluate(const Samples& x_t, int t) const {
  if (kind_ == Kind::kNetwork) return kernels::parallel::predict_shared(*net_, x_t, t, cond_);
  const double ab = schedule_->alpha_bar(t);
  return marginal_eps_batch(marginal_at(*world_, ab), ab, x_t);
}

Vector NoiseSource::evaluate(const Vector& x_t, int t) const {
  const Samples x = x_t.transpose();
  return evaluate(x, t).row(0).transpose();
}

std::string_view to_string(GuidanceMode mode) {
  switch (mode) {
    case GuidanceMode::kCfg: return "cfg";
    case GuidanceMode::kReplacementCfg: return "replacement_cfg";
    case GuidanceMode::kDualCfg: return "dual_cfg";
    case GuidanceMode::kDualReplacementCfg: return "dual_replacement_cfg";
  }
  return "?";
}

GuidanceMode parse_guidance_mode(std::string_view s) {
  for (auto m : {GuidanceMode::kCfg, GuidanceMode::kReplacementCfg, GuidanceMode::kDualCfg,
                 GuidanceMode::kDualReplacementCfg}) {
    if (s == to_string(m)) return m;
  }
  fail(ErrorCode::kInvalidConfig, "unknown guidance mode '" + std::string(s) + "'");
}

bool is_dual(GuidanceMode mode) {
  return mode == GuidanceMode::kDualCfg || mode == GuidanceMode::kDualReplacementCfg;
}

void validate(const GuidanceSpec& spec) {
  int dim = -1;
  for (const auto& name : required_sources(spec.mode)) {
    const auto it = spec.sources.find(name);
    if (it == spec.sources.end()) {
      fail(ErrorCode::kInvalidConfig, std::string(to_string(spec.mode)) + " needs source '" + name + "'");
    }
    if (dim >= 0 && it->second.dim() != dim) {
      fail(ErrorCode::kDimensionMismatch, "guidance sources disagree on dimension");
    }
    dim = it->second.dim();
  }
  for (double g : {spec.gamma, spec.gamma1, spec.gamma2}) {
    if (!std::isfinite(g)) fail(ErrorCode::kInvalidConfig, "guidance scale is not finite");
  }
  if (spec.interval && spec.interval->first > spec.interval->second) {
    fail(ErrorCode::kInvalidConfig, "guidance interval has lo > hi");
  }
}

GuidedNoise guided_eps(const GuidanceSpec& spec, const Samples& x_t, int t) {
  validate(spec);
  const bool guided = !spec.interval || (t >= spec.interval->first && t <= spec.interval->second);
  std::vector<std::string> names = required_sources(spec.mode);
  if (!guided) names = {is_dual(spec.mode) ? "cond11" : "cond"};

  GuidedNoise out;
  std::map<std::string, Samples> by_key;
  std::map<std::string, const Samples*> by_name;
  for (const auto& name : names) {
    const NoiseSource& src = spec.sources.at(name);
    const std::string key = src.key();
    auto it = by_key.find(key);
    if (it == by_key.end()) {
      it = by_key.emplace(key, src.evaluate(x_t, t)).first;
      ++out.evaluations;
    }
    by_name[name] = &it->second;
  }
  if (!guided) {
    out.eps = *by_name.at(names.front());
    return out;
  }
  switch (spec.mode) {
    case GuidanceMode::kCfg:
      out.eps = cfg_noise(*by_name.at("uncond"), *by_name.at("cond"), spec.gamma);
      break;
    case GuidanceMode::kReplacementCfg:
      out.eps = replacement_cfg_noise(*by_name.at("base_uncond"), *by_name.at("cond"), spec.gamma);
      break;
    case GuidanceMode::kDualCfg:
      out.eps = dual_cfg_noise(*by_name.at("uncond00"), *by_name.at("cond10"), *by_name.at("cond11"),
                               spec.gamma1, spec.gamma2);
      break;
    case GuidanceMode::kDualReplacementCfg:
      out.eps = dual_replacement_cfg_noise(*by_name.at("base_uncond"), *by_name.at("cond10"),
                                           *by_name.at("cond11"), spec.gamma1, spec.gamma2);
      break;
  }
  return out;
}

Vector guided_eps(const GuidanceSpec& spec, const Vector& x_t, int t) {
  const Samples x = x_t.transpose();
  return guided_eps(spec, x, t).eps.row(0).transpose();
}

std::string describe(const GuidanceSpec& spec) {
  std::string s = "mode=" + std::string(to_string(spec.mode));
  if (is_dual(spec.mode)) {
    s += ";gamma1=" + format_double(spec.gamma1) + ";gamma2=" + format_double(spec.gamma2);
  } else {
    s += ";gamma=" + format_double(spec.gamma);
  }
  for (const auto& name : required_sources(spec.mode)) {
    const auto it = spec.sources.find(name);
    s += ";" + name + "=" + (it == spec.sources.end() ? "?" : it->second.describe());
  }
  if (spec.interval) {
    s += ";interval=" + std::to_string(spec.interval->first) + ".." + std::to_string(spec.interval->second);
  }
  return s;
}

}  // namespace cfglab
