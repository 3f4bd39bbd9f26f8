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

#include "cfglab/sampler.hpp"

#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <sstream>

#include "cfglab/config.hpp"
#include "cfglab/rng.hpp"

namespace cfglab {

namespace {

constexpr Eigen::Index kChainBlock = 512;

double prev_alpha_bar(int t_prev, const Schedule& schedule) {
  return t_prev == kClean ? 1.0 : schedule.alpha_bar(t_prev);
}

void check_hop(int t, int t_prev, const Schedule& schedule) {
  schedule.check_step(t);
  if (t_prev != kClean && t_prev >= t) {
    fail(ErrorCode::kInvalidParameter, "ddim_step: t_prev must precede t");
  }
}

}  // namespace

Vector ddim_step(const Vector& x_t, const Vector& eps, int t, int t_prev, const Schedule& schedule) {
  check_hop(t, t_prev, schedule);
  const double ab_prev = prev_alpha_bar(t_prev, schedule);
  const Vector x0t = tweedie_x0(x_t, eps, t, schedule);
  return std::sqrt(ab_prev) * x0t + std::sqrt(1.0 - ab_prev) * eps;
}

Samples ddim_step(const Samples& x_t, const Samples& eps, int t, int t_prev, const Schedule& schedule) {
  check_hop(t, t_prev, schedule);
  check_dims(x_t.rows(), eps.rows(), "ddim_step");
  check_dims(x_t.cols(), eps.cols(), "ddim_step");
  const double ab = schedule.alpha_bar(t);
  if (!(ab > 0.0)) fail(ErrorCode::kDegenerateTime, "ddim_step: alpha_bar = 0");
  const double ab_prev = prev_alpha_bar(t_prev, schedule);
  const Samples x0t = (x_t - std::sqrt(1.0 - ab) * eps) / std::sqrt(ab);
  return std::sqrt(ab_prev) * x0t + std::sqrt(1.0 - ab_prev) * eps;
}

std::vector<int> timestep_subsequence(int T, int S) {
  if (S < 1 || S > T) {
    fail(ErrorCode::kInvalidParameter,
         "sampler steps " + std::to_string(S) + " outside [1, " + std::to_string(T) + "]");
  }
  std::vector<int> seq(S);
  if (S == 1) {
    seq[0] = T - 1;
    return seq;
  }
  for (int i = 0; i < S; ++i) {
    const double pos = static_cast<double>(T - 1) * (S - 1 - i) / (S - 1);
    seq[i] = static_cast<int>(std::lround(pos));
  }
  return seq;
}

std::string sampler_digest(const SamplerConfig& cfg, const Schedule& schedule) {
  const auto& p = schedule.params();
  std::ostringstream s;
  s << "steps=" << cfg.num_steps << ";chains=" << cfg.n_chains << ";seed=" << cfg.seed
    << ";first_chain=" << cfg.first_chain << ";schedule=" << to_string(p.kind) << "," << p.T << ","
    << format_double(p.beta_min) << "," << format_double(p.beta_max) << ";" << describe(cfg.spec);
  Fnv1a h;
  h.update(s.str());
  return h.hex();
}

RunRecord sample_run(const SamplerConfig& cfg, const Schedule& schedule) {
  RunRecord rec;
  rec.digest = sampler_digest(cfg, schedule);
  rec.description = describe(cfg.spec);
  if (cfg.n_chains < 0) fail(ErrorCode::kInvalidParameter, "sampler: negative chain count");
  const std::vector<int> seq = timestep_subsequence(schedule.T(), cfg.num_steps);
  validate(cfg.spec);
  const int dim = cfg.spec.sources.begin()->second.dim();
  rec.samples = Samples(cfg.n_chains, dim);
  rec.step_ms.assign(cfg.num_steps, 0.0);
  if (cfg.n_chains == 0) return rec;

  const int steps = cfg.num_steps;
  const Eigen::Index n = cfg.n_chains;
  const Eigen::Index blocks = (n + kChainBlock - 1) / kChainBlock;
  std::vector<std::vector<double>> block_ms(blocks, std::vector<double>(steps, 0.0));
  std::vector<std::vector<Snapshot>> block_traj(blocks);
  std::vector<int> block_evals(blocks, 0);
  std::vector<std::exception_ptr> block_error(blocks);

#pragma omp parallel for schedule(static)
  for (Eigen::Index b = 0; b < blocks; ++b) {
    try {
      const Eigen::Index start = b * kChainBlock;
      const Eigen::Index len = std::min(kChainBlock, n - start);
      Samples x(len, dim);
      for (Eigen::Index i = 0; i < len; ++i) {
        Stream rng = Stream::derive(cfg.seed, cfg.first_chain + static_cast<std::uint64_t>(start + i));
        for (int j = 0; j < dim; ++j) x(i, j) = rng.normal();
      }
      for (int s = 0; s < steps; ++s) {
        const auto t0 = std::chrono::steady_clock::now();
        const int t = seq[s];
        const int t_prev = s + 1 < steps ? seq[s + 1] : kClean;
        GuidedNoise g = guided_eps(cfg.spec, x, t);
        const double ab = schedule.alpha_bar(t);
        const double ab_prev = prev_alpha_bar(t_prev, schedule);
        Samples x0t = (x - std::sqrt(1.0 - ab) * g.eps) / std::sqrt(ab);
        Samples next = std::sqrt(ab_prev) * x0t + std::sqrt(1.0 - ab_prev) * g.eps;
        if (!next.allFinite()) {
          fail(ErrorCode::kDivergence, "sampler: non-finite state at step " + std::to_string(s) +
                                            " (t=" + std::to_string(t) + ")");
        }
        if (s == 0) block_evals[b] = g.evaluations;
        if (cfg.record_trajectory) {
          block_traj[b].push_back({s, t, t_prev, x, std::move(g.eps), std::move(x0t), next});
        }
        x = std::move(next);
        block_ms[b][s] =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      }
      rec.samples.middleRows(start, len) = x;
    } catch (...) {
      block_error[b] = std::current_exception();
    }
  }
  for (Eigen::Index b = 0; b < blocks; ++b) {
    if (block_error[b]) std::rethrow_exception(block_error[b]);
  }

  rec.evaluations_per_step = block_evals[0];
  for (Eigen::Index b = 0; b < blocks; ++b) {
    for (int s = 0; s < steps; ++s) rec.step_ms[s] += block_ms[b][s];
  }
  if (cfg.record_trajectory) {
    rec.trajectory.resize(steps);
    for (int s = 0; s < steps; ++s) {
      Snapshot& snap = rec.trajectory[s];
      const Snapshot& first = block_traj[0][s];
      snap.step = first.step;
      snap.t = first.t;
      snap.t_prev = first.t_prev;
      for (Samples Snapshot::*field : {&Snapshot::x_t, &Snapshot::eps, &Snapshot::x0t, &Snapshot::x_prev}) {
        (snap.*field).resize(n, dim);
        for (Eigen::Index b = 0; b < blocks; ++b) {
          const Samples& part = block_traj[b][s].*field;
          (snap.*field).middleRows(b * kChainBlock, part.rows()) = part;
        }
      }
    }
  }
  return rec;
}

namespace {

void write_rows(std::ostream& out, const Samples& m, Eigen::Index i) {
  for (Eigen::Index j = 0; j < m.cols(); ++j) out << "," << format_double(m(i, j));
}

}  // namespace

std::string run_record_to_text(const RunRecord& rec) {
  std::ostringstream out;
  out << "# cfglab run record\n";
  out << "format_version = 1\n";
  out << "digest = " << rec.digest << "\n";
  out << "guidance = " << rec.description << "\n";
  out << "chains = " << rec.samples.rows() << "\n";
  out << "dim = " << rec.samples.cols() << "\n";
  out << "steps = " << rec.step_ms.size() << "\n";
  out << "evaluations_per_step = " << rec.evaluations_per_step << "\n";
  out << "[samples]\n";
  for (Eigen::Index j = 0; j < rec.samples.cols(); ++j) out << (j ? "," : "") << "x" << j;
  out << "\n";
  for (Eigen::Index i = 0; i < rec.samples.rows(); ++i) {
    for (Eigen::Index j = 0; j < rec.samples.cols(); ++j) {
      out << (j ? "," : "") << format_double(rec.samples(i, j));
    }
    out << "\n";
  }
  if (!rec.trajectory.empty()) {
    out << "[trajectory]\n";
    out << "step,t,chain";
    const auto d = rec.samples.cols();
    for (const char* name : {"x", "eps", "x0t"}) {
      for (Eigen::Index j = 0; j < d; ++j) out << "," << name << j;
    }
    out << "\n";
    for (const auto& snap : rec.trajectory) {
      for (Eigen::Index i = 0; i < snap.x_t.rows(); ++i) {
        out << snap.step << "," << snap.t << "," << i;
        write_rows(out, snap.x_t, i);
        write_rows(out, snap.eps, i);
        write_rows(out, snap.x0t, i);
        out << "\n";
      }
    }
  }
  out << "[timings_ms]\n";
  out << "step,ms\n";
  for (std::size_t s = 0; s < rec.step_ms.size(); ++s) {
    out << s << "," << format_double(rec.step_ms[s]) << "\n";
  }
  return out.str();
}

void save_run_record(const std::string& path, const RunRecord& rec) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kIo, "cannot write run record '" + path + "'");
  out << run_record_to_text(rec);
}

RunRecord load_run_record(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open run record '" + path + "'");
  std::string line, section, header;
  std::vector<std::vector<double>> rows;
  RunRecord rec;
  bool skip_columns = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.front() == '[') {
      section = line;
      skip_columns = true;
      continue;
    }
    if (section.empty()) {
      header += line + "\n";
      continue;
    }
    if (skip_columns) {
      skip_columns = false;
      continue;
    }
    if (section == "[samples]") {
      std::vector<double> row;
      for (const auto& tok : split_list(line)) row.push_back(parse_double(tok, "samples"));
      rows.push_back(std::move(row));
    } else if (section == "[timings_ms]") {
      const auto toks = split_list(line);
      if (toks.size() == 2) rec.step_ms.push_back(parse_double(toks[1], "timings"));
    }
  }
  const Config head = Config::parse(header, path);
  rec.digest = head.get_string("digest", "");
  rec.description = head.get_string("guidance", "");
  rec.evaluations_per_step = head.get_int("evaluations_per_step", 0);
  const int dim = head.get_int("dim", rows.empty() ? 0 : static_cast<int>(rows.front().size()));
  rec.samples = Samples(static_cast<Eigen::Index>(rows.size()), dim);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    check_dims(static_cast<Eigen::Index>(rows[i].size()), dim, "run record sample row");
    for (int j = 0; j < dim; ++j) rec.samples(static_cast<Eigen::Index>(i), j) = rows[i][j];
  }
  return rec;
}

}  // namespace cfglab
