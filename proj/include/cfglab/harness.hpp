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
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "cfglab/config.hpp"
#include "cfglab/denoiser.hpp"
#include "cfglab/guidance.hpp"
#include "cfglab/metrics.hpp"
#include "cfglab/sampler.hpp"
#include "cfglab/schedule.hpp"

namespace cfglab {

/// Optimizer budget for one training stage. A non-empty `checkpoint` loads
/// that file instead of training.
struct TrainSettings {
  int steps = 0;
  int batch = 128;
  double lr = 1e-3;
  double drop_coarse = 0.1;
  double drop_fine = 0.1;
  std::string checkpoint;
};

struct ExperimentConfig {
  std::string full_world = "ring8";
  std::string narrow_world = "narrow2";
  ScheduleParams schedule;
  std::vector<int> hidden = {128, 128, 128};
  int time_freqs = 8;
  double time_max_freq = 100;
  int coarse_width = 8;
  int fine_width = 8;
  TrainSettings base{20000, 128, 1e-3, 0.1, 1.0, {}};
  TrainSettings finetune{4000, 128, 1e-3, 0.1, 0.1, {}};
  std::vector<GuidanceMode> modes = {GuidanceMode::kCfg, GuidanceMode::kReplacementCfg,
                                     GuidanceMode::kDualCfg, GuidanceMode::kDualReplacementCfg};
  std::vector<double> gammas = {1, 2, 3, 5};
  double dual_gamma1 = 1.5;
  std::vector<double> dual_gamma2 = {3, 7.5};
  int sampler_steps = 50;
  int n_chains = 4000;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  bool unconditional = true;
  /// Fine labels to condition on; empty means every fine label of the narrow world.
  std::vector<int> conditions;
  std::vector<std::string> metrics = {"sliced_w", "mmd_rbf", "coverage", "off_mode"};
  MetricOptions eval;
  std::string output_dir = "out";
};

/// Every recognised key with its default, one "key = value" per line.
std::string experiment_key_reference();

/// Reads dotted keys; unknown keys and bad values are all collected and
/// reported in one kInvalidConfig. Resolves worlds and checks that referenced
/// checkpoint files exist without reading them.
ExperimentConfig experiment_config_from(const Config& cfg);

/// Fully resolved settings (output location excluded), sorted.
std::string canonical_text(const ExperimentConfig& cfg);
std::string config_digest(const ExperimentConfig& cfg);

/// CFGLAB_OUT when set, otherwise cfg.output_dir.
std::string output_root(const ExperimentConfig& cfg);

/// Architecture implied by the worlds and schedule.
Architecture architecture_for(const ExperimentConfig& cfg);

/// Fine labels the conditional runs cover.
std::vector<int> condition_labels(const ExperimentConfig& cfg);

/// Per-stage seed derived from the experiment seed.
enum class Stage : std::uint64_t { kBase = 1, kFinetune = 2, kSampler = 3, kReference = 4 };
std::uint64_t stage_seed(std::uint64_t seed, Stage stage, std::uint64_t index = 0);

struct ResultRow {
  std::string run_id;
  std::string config_digest;
  std::uint64_t seed = 0;
  std::string mode;
  std::optional<double> gamma;
  std::optional<double> gamma2;
  std::string world;
  std::string condition;
  std::string metric;
  double value = 0.0;
  int n_chains = 0;
  int steps = 0;
};

inline constexpr const char* kResultsHeader =
    "run_id,config_digest,seed,mode,gamma,gamma2,world,condition,metric,value,n_chains,steps";

/// Rows of unconditional runs use these mode names.
inline constexpr const char* kBaseUncondMode = "base_uncond";
inline constexpr const char* kFinetuneUncondMode = "ft_uncond";

/// Deterministic order: seed, mode, gamma, gamma2, condition, metric.
void sort_rows(std::vector<ResultRow>& rows);
std::string results_to_csv(const std::vector<ResultRow>& rows);
std::vector<ResultRow> results_from_csv(const std::string& text);

struct RunTiming {
  std::string run_id;
  std::string mode;
  int steps = 0;
  int n_chains = 0;
  int evaluations_per_step = 0;
  std::vector<double> step_ms;
  double mean_step_ms() const;
};

std::string timings_to_csv(const std::vector<RunTiming>& runs);
/// Reads the per-run mean back; step_ms holds that single value.
std::vector<RunTiming> timings_from_csv(const std::string& text);

struct OverheadReport {
  /// Mean per-step wall time per mode, averaged over that mode's runs.
  std::map<std::string, double> mean_step_ms;
  std::optional<double> ratio(const std::string& numerator, const std::string& denominator) const;
};

/// kMismatchedRuns unless there are >= 2 runs sharing steps and chain count.
OverheadReport overhead_report(const std::vector<RunTiming>& runs);

/// Identifies one sweep point independent of seed and condition.
struct CellKey {
  std::string mode;
  std::optional<double> gamma;
  std::optional<double> gamma2;
  auto tie() const { return std::tie(mode, gamma, gamma2); }
  bool operator<(const CellKey& o) const { return tie() < o.tie(); }
  bool operator==(const CellKey& o) const { return tie() == o.tie(); }
};

/// For `metric`: per cell, per seed, the mean over conditions. Cells with a
/// failed condition are skipped for that seed.
std::map<CellKey, std::map<std::uint64_t, double>> per_seed_values(const std::vector<ResultRow>& rows,
                                                                   const std::string& metric);

double median(std::vector<double> values);

/// Vanilla mode against its base-prior replacement at the same gammas.
struct Comparison {
  CellKey vanilla;
  CellKey replacement;
  std::vector<std::uint64_t> seeds;  // seeds where both succeeded
  std::vector<double> vanilla_values;
  std::vector<double> replacement_values;
  /// (vanilla - replacement) / vanilla per seed.
  std::vector<double> relative_improvements;
  double median_vanilla = 0.0;
  double median_replacement = 0.0;
  double median_relative_improvement = 0.0;
  int seeds_improved = 0;
};

/// Pairs cfg with replacement_cfg and dual_cfg with dual_replacement_cfg.
std::vector<Comparison> compare_replacement(const std::vector<ResultRow>& rows, const std::string& metric);

/// Markdown tables of the sweep plus the replacement-vs-vanilla comparison.
std::string render_summary(const std::vector<ResultRow>& rows,
                           const std::optional<OverheadReport>& overhead = std::nullopt);

/// gamma on x (gamma2 for dual modes), median sliced_w across seeds, one
/// column per mode.
std::string plot_csv(const std::vector<ResultRow>& rows, const std::string& metric = "sliced_w");

struct ExperimentResult {
  std::string digest;
  std::string out_dir;
  std::vector<ResultRow> rows;
  std::vector<RunTiming> timings;
  int failed_cells = 0;
};

/// Trains (or loads) base and fine-tuned nets per seed, samples every sweep
/// cell for every condition, and writes under <root>/<digest>/:
///   config.cfg, results.csv, summary.md, plot_sliced_w.csv, timings.csv,
///   timings.log, checkpoints/, runs/.
/// A failing cell becomes "error:<code>" rows and the sweep continues.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

/// Rebuilds summary.md and plot CSVs from a finished output directory.
std::string write_report(const std::string& out_dir);

/// Builds a guidance spec from "guidance.*" keys:
///   guidance.mode, guidance.gamma, guidance.gamma1, guidance.gamma2,
///   guidance.interval = lo,hi,
///   guidance.source.<name>.kind = network | oracle,
///   guidance.source.<name>.checkpoint / .world, .coarse, .fine
/// Missing sources are filled from guidance.checkpoint (fine-tuned),
/// guidance.base_checkpoint and guidance.coarse / guidance.fine.
GuidanceSpec guidance_spec_from(const Config& cfg, const Schedule& schedule);

}  // namespace cfglab
