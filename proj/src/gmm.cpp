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

#include "cfglab/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include "json.hpp"

#include "cfglab/rng.hpp"

namespace cfglab {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

double component_log_pdf(const Component& c, const Vector& x) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double diff = x[i] - c.mean[i];
    acc += diff * diff / c.var[i] + std::log(c.var[i]);
  }
  return -0.5 * (acc + x.size() * kLog2Pi);
}

// log w_k + log N_k(x), normalized in place to responsibilities; returns
// the log-sum-exp.
double responsibilities(const GaussianMixture& gmm, const Vector& x, std::vector<double>& r) {
  r.resize(gmm.size());
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < gmm.size(); ++k) {
    r[k] = std::log(gmm[k].weight) + component_log_pdf(gmm[k], x);
    top = std::max(top, r[k]);
  }
  double sum = 0.0;
  for (double& v : r) {
    v = std::exp(v - top);
    sum += v;
  }
  for (double& v : r) v /= sum;
  return top + std::log(sum);
}

}  // namespace

GaussianMixture::GaussianMixture(std::vector<Component> components)
    : components_(std::move(components)) {
  if (components_.empty()) fail(ErrorCode::kInvalidParameter, "mixture has no components");
  dim_ = static_cast<int>(components_.front().mean.size());
  if (dim_ < 1) fail(ErrorCode::kInvalidParameter, "mixture dimension must be >= 1");
  double total = 0.0;
  for (const auto& c : components_) {
    check_dims(c.mean.size(), dim_, "mixture component mean");
    check_dims(c.var.size(), dim_, "mixture component variance");
    if (!(c.weight > 0.0) || !std::isfinite(c.weight)) {
      fail(ErrorCode::kInvalidParameter, "mixture weights must be positive");
    }
    if (!(c.var.array() > 0.0).all()) {
      fail(ErrorCode::kInvalidParameter, "mixture variances must be positive");
    }
    if (c.coarse < 0 || c.fine < 0) {
      fail(ErrorCode::kInvalidParameter, "mixture labels must be non-negative");
    }
    total += c.weight;
  }
  for (auto& c : components_) c.weight /= total;
}

int GaussianMixture::coarse_vocab() const {
  int v = 0;
  for (const auto& c : components_) v = std::max(v, c.coarse + 1);
  return v;
}

int GaussianMixture::fine_vocab() const {
  int v = 0;
  for (const auto& c : components_) v = std::max(v, c.fine + 1);
  return v;
}

bool matches(const Component& c, LabelFilter coarse, LabelFilter fine) {
  return (!coarse || c.coarse == *coarse) && (!fine || c.fine == *fine);
}

double retained_weight(const GaussianMixture& gmm, LabelFilter coarse, LabelFilter fine) {
  double w = 0.0;
  for (const auto& c : gmm.components()) {
    if (matches(c, coarse, fine)) w += c.weight;
  }
  return w;
}

GaussianMixture restrict(const GaussianMixture& gmm, LabelFilter coarse, LabelFilter fine) {
  if (!coarse && !fine) return gmm;
  std::vector<Component> kept;
  for (const auto& c : gmm.components()) {
    if (matches(c, coarse, fine)) kept.push_back(c);
  }
  if (kept.empty()) {
    fail(ErrorCode::kEmptyCondition,
         "no component matches coarse=" + (coarse ? std::to_string(*coarse) : "any") +
             " fine=" + (fine ? std::to_string(*fine) : "any"));
  }
  return GaussianMixture(std::move(kept));
}

GaussianMixture merge(const GaussianMixture& a, double weight_a, const GaussianMixture& b,
                      double weight_b) {
  check_dims(a.dim(), b.dim(), "merge");
  std::vector<Component> all;
  for (auto c : a.components()) {
    c.weight *= weight_a;
    all.push_back(std::move(c));
  }
  for (auto c : b.components()) {
    c.weight *= weight_b;
    all.push_back(std::move(c));
  }
  return GaussianMixture(std::move(all));
}

GaussianMixture marginal_at(const GaussianMixture& gmm, double alpha_bar) {
  std::vector<Component> out = gmm.components();
  const double s = std::sqrt(alpha_bar);
  for (auto& c : out) {
    c.mean *= s;
    c.var = (alpha_bar * c.var.array() + (1.0 - alpha_bar)).matrix();
  }
  return GaussianMixture(std::move(out));
}

GaussianMixture marginal_at_t(const GaussianMixture& gmm, const Schedule& schedule, int t) {
  return marginal_at(gmm, schedule.alpha_bar(t));
}

double log_density(const GaussianMixture& gmm, const Vector& x) {
  check_dims(x.size(), gmm.dim(), "log_density");
  std::vector<double> r;
  return responsibilities(gmm, x, r);
}

Vector score(const GaussianMixture& gmm, const Vector& x) {
  check_dims(x.size(), gmm.dim(), "score");
  std::vector<double> r;
  responsibilities(gmm, x, r);
  Vector g = Vector::Zero(x.size());
  for (std::size_t k = 0; k < gmm.size(); ++k) {
    g.array() += r[k] * (gmm[k].mean - x).array() / gmm[k].var.array();
  }
  return g;
}

Vector exact_eps_at(const GaussianMixture& gmm, double alpha_bar, const Vector& x_t,
                    LabelFilter coarse, LabelFilter fine) {
  if (!(alpha_bar < 1.0)) fail(ErrorCode::kDegenerateTime, "exact_eps: alpha_bar = 1");
  const GaussianMixture marginal = marginal_at(restrict(gmm, coarse, fine), alpha_bar);
  return -std::sqrt(1.0 - alpha_bar) * score(marginal, x_t);
}

Vector exact_eps(const GaussianMixture& gmm, const Schedule& schedule, int t, const Vector& x_t,
                 LabelFilter coarse, LabelFilter fine) {
  return exact_eps_at(gmm, schedule.alpha_bar(t), x_t, coarse, fine);
}

Samples marginal_eps_batch(const GaussianMixture& marginal, double alpha_bar, const Samples& x) {
  if (!(alpha_bar < 1.0)) fail(ErrorCode::kDegenerateTime, "exact_eps: alpha_bar = 1");
  check_dims(x.cols(), marginal.dim(), "marginal_eps_batch");
  const double scale = -std::sqrt(1.0 - alpha_bar);
  Samples out(x.rows(), x.cols());
  const auto n = x.rows();
#pragma omp parallel for schedule(static)
  for (Eigen::Index i = 0; i < n; ++i) {
    out.row(i) = scale * score(marginal, x.row(i).transpose()).transpose();
  }
  return out;
}

LabeledSamples sample(const GaussianMixture& gmm, int n, std::uint64_t seed, LabelFilter coarse,
                      LabelFilter fine) {
  if (n < 1) fail(ErrorCode::kInvalidParameter, "sample: n must be >= 1");
  const GaussianMixture g = restrict(gmm, coarse, fine);
  std::vector<double> cdf(g.size());
  double acc = 0.0;
  for (std::size_t k = 0; k < g.size(); ++k) cdf[k] = (acc += g[k].weight);
  LabeledSamples out{Samples(n, g.dim()), std::vector<int>(n)};
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) {
    Stream rng = Stream::derive(seed, static_cast<std::uint64_t>(i));
    const double u = rng.uniform() * acc;
    const auto k = std::min<std::size_t>(
        std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin(), g.size() - 1);
    out.component[i] = static_cast<int>(k);
    for (int j = 0; j < g.dim(); ++j) {
      out.x(i, j) = g[k].mean[j] + std::sqrt(g[k].var[j]) * rng.normal();
    }
  }
  return out;
}

GaussianMixture ring8() {
  std::vector<Component> cs;
  for (int k = 0; k < 8; ++k) {
    const double angle = 2.0 * std::numbers::pi * k / 8.0;
    Component c;
    c.weight = 1.0;
    c.mean = Vector{{4.0 * std::cos(angle), 4.0 * std::sin(angle)}};
    c.var = Vector::Constant(2, 0.05);
    c.coarse = k % 4;
    c.fine = k;
    cs.push_back(std::move(c));
  }
  return GaussianMixture(std::move(cs));
}

GaussianMixture narrow2() {
  const GaussianMixture full = ring8();
  return GaussianMixture({full[0], full[1]});
}

GaussianMixture gaussian2d() {
  Component c;
  c.mean = Vector{{1.0, -0.5}};
  c.var = Vector{{0.3, 0.6}};
  return GaussianMixture({c});
}

std::optional<GaussianMixture> preset_world(std::string_view name) {
  if (name == "ring8") return ring8();
  if (name == "narrow2") return narrow2();
  if (name == "gaussian2d") return gaussian2d();
  return std::nullopt;
}

std::string to_json(const GaussianMixture& gmm) {
  nlohmann::ordered_json j;
  j["dim"] = gmm.dim();
  j["components"] = nlohmann::ordered_json::array();
  for (const auto& c : gmm.components()) {
    nlohmann::ordered_json jc;
    jc["weight"] = c.weight;
    jc["mean"] = std::vector<double>(c.mean.begin(), c.mean.end());
    jc["var_diag"] = std::vector<double>(c.var.begin(), c.var.end());
    jc["coarse_label"] = c.coarse;
    jc["fine_label"] = c.fine;
    j["components"].push_back(std::move(jc));
  }
  return j.dump(2);
}

GaussianMixture mixture_from_json(std::string_view text) {
  try {
    const auto j = nlohmann::json::parse(text);
    const int dim = j.at("dim").get<int>();
    std::vector<Component> cs;
    for (const auto& jc : j.at("components")) {
      Component c;
      c.weight = jc.at("weight").get<double>();
      const auto mean = jc.at("mean").get<std::vector<double>>();
      const auto var = jc.at("var_diag").get<std::vector<double>>();
      c.mean = Eigen::Map<const Vector>(mean.data(), static_cast<Eigen::Index>(mean.size()));
      c.var = Eigen::Map<const Vector>(var.data(), static_cast<Eigen::Index>(var.size()));
      c.coarse = jc.value("coarse_label", 0);
      c.fine = jc.value("fine_label", 0);
      check_dims(c.mean.size(), dim, "mixture file mean");
      cs.push_back(std::move(c));
    }
    return GaussianMixture(std::move(cs));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kInvalidConfig, std::string("mixture file: ") + e.what());
  }
}

GaussianMixture resolve_world(const std::string& name_or_path) {
  if (auto preset = preset_world(name_or_path)) return *preset;
  std::ifstream in(name_or_path);
  if (!in) fail(ErrorCode::kIo, "cannot resolve world '" + name_or_path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return mixture_from_json(ss.str());
}

}  // namespace cfglab
