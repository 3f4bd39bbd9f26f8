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

#include "cfglab/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "cfglab/gmm.hpp"
#include "cfglab/rng.hpp"

namespace cfglab {

namespace fs = std::filesystem;

namespace {

const std::vector<std::string> kKnownMetrics = {"sliced_w", "mmd_rbf", "coverage", "off_mode", "w1_exact"};

std::string join(const std::vector<std::string>& parts, const char* sep = ",") {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? sep : "") + parts[i];
  return out;
}

template <class T, class F>
std::string join_map(const std::vector<T>& xs, F f) {
  std::vector<std::string> parts;
  for (const auto& x : xs) parts.push_back(f(x));
  return join(parts);
}

std::string opt_double(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

std::string short_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kIo, "cannot write '" + path.string() + "'");
  out << text;
  if (!out) fail(ErrorCode::kIo, "write failed for '" + path.string() + "'");
}

/// Collects configuration problems so they can be reported together.
class Problems {
 public:
  template <class F>
  void guard(F&& f) {
    try {
      f();
    } catch (const Error& e) {
      add(e.what());
    }
  }
  void add(std::string msg) { msgs_.push_back(std::move(msg)); }
  void throw_if_any() const {
    if (msgs_.empty()) return;
    fail(ErrorCode::kInvalidConfig, std::to_string(msgs_.size()) + " config error(s): " + join(msgs_, "; "));
  }

 private:
  std::vector<std::string> msgs_;
};

void read_train(const Config& c, const std::string& prefix, TrainSettings& s, Problems& p) {
  p.guard([&] { s.steps = c.get_int(prefix + ".steps", s.steps); });
  p.guard([&] { s.batch = c.get_int(prefix + ".batch", s.batch); });
  p.guard([&] { s.lr = c.get_double(prefix + ".lr", s.lr); });
  p.guard([&] { s.drop_coarse = c.get_double(prefix + ".drop_coarse", s.drop_coarse); });
  p.guard([&] { s.drop_fine = c.get_double(prefix + ".drop_fine", s.drop_fine); });
  s.checkpoint = c.get_string(prefix + ".checkpoint", s.checkpoint);
  if (!s.checkpoint.empty()) {
    if (!fs::is_regular_file(s.checkpoint)) p.add(prefix + ".checkpoint: no such file '" + s.checkpoint + "'");
    return;
  }
  if (s.steps < 0) p.add(prefix + ".steps must be >= 0");
  if (s.batch < 1) p.add(prefix + ".batch must be >= 1");
  if (!(s.lr > 0.0) || !std::isfinite(s.lr)) p.add(prefix + ".lr must be a positive number");
  for (double d : {s.drop_coarse, s.drop_fine}) {
    if (!(d >= 0.0 && d <= 1.0)) p.add(prefix + ".drop_* must lie in [0, 1]");
  }
}

void render_train(std::ostringstream& s, const std::string& prefix, const TrainSettings& t) {
  s << prefix << ".batch = " << t.batch << "\n";
  if (!t.checkpoint.empty()) s << prefix << ".checkpoint = " << t.checkpoint << "\n";
  s << prefix << ".drop_coarse = " << format_double(t.drop_coarse) << "\n";
  s << prefix << ".drop_fine = " << format_double(t.drop_fine) << "\n";
  s << prefix << ".lr = " << format_double(t.lr) << "\n";
  s << prefix << ".steps = " << t.steps << "\n";
}

int mode_rank(const std::string& mode) {
  static const std::vector<std::string> order = {kBaseUncondMode, kFinetuneUncondMode, "cfg",
                                                 "replacement_cfg", "dual_cfg", "dual_replacement_cfg"};
  const auto it = std::find(order.begin(), order.end(), mode);
  return static_cast<int>(it - order.begin());
}

int metric_rank(const std::string& metric) {
  const auto it = std::find(kKnownMetrics.begin(), kKnownMetrics.end(), metric);
  return static_cast<int>(it - kKnownMetrics.begin());
}

std::string timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t tt = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

class Log {
 public:
  explicit Log(const fs::path& path) : out_(path, std::ios::binary) {
    if (!out_) fail(ErrorCode::kIo, "cannot write '" + path.string() + "'");
  }
  void line(const std::string& text) { out_ << timestamp() << " " << text << "\n" << std::flush; }

 private:
  std::ofstream out_;
};

double ms_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

/// One sweep point: an unconditional run of one network or a guided mode.
struct Cell {
  std::string mode;
  std::optional<GuidanceMode> guidance;
  bool base_net = false;  // unconditional cells only
  std::optional<double> gamma;
  std::optional<double> gamma2;
};

std::vector<Cell> enumerate_cells(const ExperimentConfig& cfg) {
  std::vector<Cell> cells;
  if (cfg.unconditional) {
    cells.push_back({kBaseUncondMode, std::nullopt, true, std::nullopt, std::nullopt});
    cells.push_back({kFinetuneUncondMode, std::nullopt, false, std::nullopt, std::nullopt});
  }
  for (GuidanceMode m : cfg.modes) {
    if (is_dual(m)) {
      for (double g2 : cfg.dual_gamma2) cells.push_back({std::string(to_string(m)), m, false, cfg.dual_gamma1, g2});
    } else {
      for (double g : cfg.gammas) cells.push_back({std::string(to_string(m)), m, false, g, std::nullopt});
    }
  }
  return cells;
}

std::string cond_text(std::optional<int> coarse, std::optional<int> fine) {
  if (!coarse && !fine) return "none";
  std::string s;
  if (coarse) s += "coarse=" + std::to_string(*coarse);
  if (fine) s += std::string(s.empty() ? "" : ";") + "fine=" + std::to_string(*fine);
  return s;
}

std::string run_id(std::uint64_t seed, const Cell& cell, const std::string& cond_tag) {
  std::string id = "s" + std::to_string(seed) + "_" + cell.mode;
  if (cell.gamma) id += "_g" + format_double(*cell.gamma);
  if (cell.gamma2) id += "_g2-" + format_double(*cell.gamma2);
  return id + "_" + cond_tag;
}

int first_coarse_of(const GaussianMixture& world, int fine) {
  for (const auto& c : world.components()) {
    if (c.fine == fine) return c.coarse;
  }
  fail(ErrorCode::kEmptyCondition, "no component has fine label " + std::to_string(fine));
}

GuidanceSpec cell_spec(const Cell& cell, const std::shared_ptr<const Denoiser>& base,
                       const std::shared_ptr<const Denoiser>& ft, int coarse, int fine) {
  GuidanceSpec spec;
  auto net = [](const std::shared_ptr<const Denoiser>& n, Condition c, const char* label) {
    return NoiseSource::network(n, c, label);
  };
  if (!cell.guidance) {
    const auto src = net(cell.base_net ? base : ft, {}, cell.base_net ? "base" : "ft");
    spec.mode = GuidanceMode::kCfg;
    spec.gamma = 1.0;
    spec.sources.emplace("uncond", src);
    spec.sources.emplace("cond", src);
    return spec;
  }
  spec.mode = *cell.guidance;
  switch (spec.mode) {
    case GuidanceMode::kCfg:
      spec.gamma = *cell.gamma;
      spec.sources.emplace("uncond", net(ft, {}, "ft"));
      spec.sources.emplace("cond", net(ft, {kNullLabel, fine}, "ft"));
      break;
    case GuidanceMode::kReplacementCfg:
      spec.gamma = *cell.gamma;
      spec.sources.emplace("base_uncond", net(base, {}, "base"));
      spec.sources.emplace("cond", net(ft, {kNullLabel, fine}, "ft"));
      break;
    case GuidanceMode::kDualCfg:
    case GuidanceMode::kDualReplacementCfg:
      spec.gamma1 = *cell.gamma;
      spec.gamma2 = *cell.gamma2;
      if (spec.mode == GuidanceMode::kDualCfg) {
        spec.sources.emplace("uncond00", net(ft, {}, "ft"));
      } else {
        spec.sources.emplace("base_uncond", net(base, {}, "base"));
      }
      spec.sources.emplace("cond10", net(ft, {coarse, kNullLabel}, "ft"));
      spec.sources.emplace("cond11", net(ft, {coarse, fine}, "ft"));
      break;
  }
  return spec;
}

std::vector<std::pair<std::string, double>> metric_values(const std::vector<std::string>& wanted,
                                                          const Samples& samples, const Samples& reference,
                                                          const GaussianMixture& world,
                                                          const MetricOptions& opts) {
  const MetricReport rep = evaluate_samples(samples, reference, world, opts);
  std::vector<std::pair<std::string, double>> out;
  for (const auto& m : wanted) {
    if (m == "sliced_w") out.emplace_back(m, rep.sliced_w);
    if (m == "mmd_rbf") out.emplace_back(m, rep.mmd_rbf);
    if (m == "coverage") out.emplace_back(m, rep.modes.coverage);
    if (m == "off_mode") {
      out.emplace_back(m, samples.rows() ? static_cast<double>(rep.modes.unassigned) / samples.rows() : 0.0);
    }
    if (m == "w1_exact" && rep.w1_exact) out.emplace_back(m, *rep.w1_exact);
  }
  return out;
}

std::string error_code_of(const std::exception& e) {
  if (const auto* err = dynamic_cast<const Error*>(&e)) return std::string(to_string(err->code()));
  return "internal";
}

}  // namespace

std::uint64_t stage_seed(std::uint64_t seed, Stage stage, std::uint64_t index) {
  return splitmix64(splitmix64(seed ^ (static_cast<std::uint64_t>(stage) << 56)) + index);
}

ExperimentConfig experiment_config_from(const Config& c) {
  ExperimentConfig cfg;
  Problems p;

  const ExperimentConfig defaults;
  std::set<std::string> known;
  {
    std::istringstream lines(canonical_text(defaults));
    std::string line;
    while (std::getline(lines, line)) known.insert(trim(line.substr(0, line.find('='))));
    for (const char* k : {"output.dir", "base.checkpoint", "finetune.checkpoint", "experiment.conditions"}) {
      known.insert(k);
    }
  }
  for (const auto& [k, v] : c.values()) {
    if (!known.count(k)) p.add("unknown key '" + k + "'");
  }

  cfg.full_world = c.get_string("world.full", cfg.full_world);
  cfg.narrow_world = c.get_string("world.narrow", cfg.narrow_world);
  std::optional<GaussianMixture> full, narrow;
  p.guard([&] { full = resolve_world(cfg.full_world); });
  p.guard([&] { narrow = resolve_world(cfg.narrow_world); });

  p.guard([&] { cfg.schedule.kind = parse_schedule_kind(c.get_string("schedule.kind", "linear")); });
  p.guard([&] { cfg.schedule.T = c.get_int("schedule.T", cfg.schedule.T); });
  p.guard([&] { cfg.schedule.beta_min = c.get_double("schedule.beta_min", cfg.schedule.beta_min); });
  p.guard([&] { cfg.schedule.beta_max = c.get_double("schedule.beta_max", cfg.schedule.beta_max); });
  p.guard([&] { (void)Schedule::build(cfg.schedule); });

  p.guard([&] { cfg.hidden = c.get_ints("model.hidden", cfg.hidden); });
  p.guard([&] { cfg.time_freqs = c.get_int("model.time_freqs", cfg.time_freqs); });
  p.guard([&] { cfg.time_max_freq = c.get_double("model.time_max_freq", cfg.time_max_freq); });
  p.guard([&] { cfg.coarse_width = c.get_int("model.coarse_width", cfg.coarse_width); });
  p.guard([&] { cfg.fine_width = c.get_int("model.fine_width", cfg.fine_width); });
  if (cfg.hidden.empty() || std::any_of(cfg.hidden.begin(), cfg.hidden.end(), [](int h) { return h < 1; })) {
    p.add("model.hidden needs one or more positive widths");
  }
  if (cfg.time_freqs < 2) p.add("model.time_freqs must be >= 2");
  if (!(cfg.time_max_freq >= 1.0)) p.add("model.time_max_freq must be >= 1");
  if (cfg.coarse_width < 1 || cfg.fine_width < 1) p.add("model.*_width must be >= 1");

  read_train(c, "base", cfg.base, p);
  read_train(c, "finetune", cfg.finetune, p);

  p.guard([&] {
    cfg.modes.clear();
    for (const auto& m : c.get_list("sweep.modes", {"cfg", "replacement_cfg", "dual_cfg", "dual_replacement_cfg"})) {
      p.guard([&] { cfg.modes.push_back(parse_guidance_mode(m)); });
    }
  });
  p.guard([&] { cfg.gammas = c.get_doubles("sweep.gammas", cfg.gammas); });
  p.guard([&] { cfg.dual_gamma1 = c.get_double("sweep.dual_gamma1", cfg.dual_gamma1); });
  p.guard([&] { cfg.dual_gamma2 = c.get_doubles("sweep.dual_gamma2", cfg.dual_gamma2); });
  for (double g : cfg.gammas) {
    if (!std::isfinite(g)) p.add("sweep.gammas must be finite");
  }
  for (double g : cfg.dual_gamma2) {
    if (!std::isfinite(g)) p.add("sweep.dual_gamma2 must be finite");
  }
  if (!std::isfinite(cfg.dual_gamma1)) p.add("sweep.dual_gamma1 must be finite");
  const bool any_single = std::any_of(cfg.modes.begin(), cfg.modes.end(), [](GuidanceMode m) { return !is_dual(m); });
  const bool any_dual = std::any_of(cfg.modes.begin(), cfg.modes.end(), [](GuidanceMode m) { return is_dual(m); });
  if (any_single && cfg.gammas.empty()) p.add("sweep.gammas is empty");
  if (any_dual && cfg.dual_gamma2.empty()) p.add("sweep.dual_gamma2 is empty");

  p.guard([&] { cfg.sampler_steps = c.get_int("sampler.steps", cfg.sampler_steps); });
  p.guard([&] { cfg.n_chains = c.get_int("sampler.chains", cfg.n_chains); });
  if (cfg.sampler_steps < 1 || cfg.sampler_steps > cfg.schedule.T) p.add("sampler.steps must lie in [1, schedule.T]");
  if (cfg.n_chains < 1) p.add("sampler.chains must be >= 1");

  p.guard([&] {
    cfg.seeds.clear();
    for (const auto& s : c.get_list("experiment.seeds", {"1", "2", "3", "4", "5"})) {
      const long long v = parse_int(s, "experiment.seeds");
      if (v < 0) fail(ErrorCode::kInvalidConfig, "experiment.seeds must be non-negative");
      cfg.seeds.push_back(static_cast<std::uint64_t>(v));
    }
  });
  if (cfg.seeds.empty()) p.add("experiment.seeds is empty");
  {
    std::set<std::uint64_t> uniq(cfg.seeds.begin(), cfg.seeds.end());
    if (uniq.size() != cfg.seeds.size()) p.add("experiment.seeds has duplicates");
  }
  p.guard([&] { cfg.unconditional = c.get_bool("experiment.unconditional", cfg.unconditional); });
  p.guard([&] { cfg.conditions = c.get_ints("experiment.conditions", cfg.conditions); });

  p.guard([&] { cfg.metrics = c.get_list("eval.metrics", cfg.metrics); });
  for (const auto& m : cfg.metrics) {
    if (std::find(kKnownMetrics.begin(), kKnownMetrics.end(), m) == kKnownMetrics.end()) {
      p.add("eval.metrics: unknown metric '" + m + "'");
    }
  }
  if (cfg.metrics.empty()) p.add("eval.metrics is empty");
  p.guard([&] { cfg.eval.projections = c.get_int("eval.projections", cfg.eval.projections); });
  p.guard([&] { cfg.eval.projection_seed = c.get_u64("eval.projection_seed", cfg.eval.projection_seed); });
  p.guard([&] { cfg.eval.radius_sigmas = c.get_double("eval.radius_sigmas", cfg.eval.radius_sigmas); });
  p.guard([&] { cfg.eval.mmd_max_points = c.get_int("eval.mmd_max_points", static_cast<int>(cfg.eval.mmd_max_points)); });
  if (cfg.eval.projections < 1) p.add("eval.projections must be >= 1");
  if (!(cfg.eval.radius_sigmas > 0.0)) p.add("eval.radius_sigmas must be > 0");
  if (cfg.eval.mmd_max_points < 1) p.add("eval.mmd_max_points must be >= 1");

  cfg.output_dir = c.get_string("output.dir", cfg.output_dir);
  if (cfg.output_dir.empty()) p.add("output.dir is empty");

  if (full && narrow) {
    if (full->dim() != narrow->dim()) p.add("world.narrow dimension differs from world.full");
    for (const auto& comp : narrow->components()) {
      if (comp.coarse >= full->coarse_vocab() || comp.fine >= full->fine_vocab()) {
        p.add("world.narrow labels exceed the vocabulary of world.full");
        break;
      }
    }
    std::set<int> fines;
    for (const auto& comp : narrow->components()) fines.insert(comp.fine);
    for (int f : cfg.conditions) {
      if (!fines.count(f)) p.add("experiment.conditions: fine label " + std::to_string(f) + " is not in world.narrow");
    }
    const bool wants_w1 = std::find(cfg.metrics.begin(), cfg.metrics.end(), "w1_exact") != cfg.metrics.end();
    if (wants_w1 && full->dim() != 1) p.add("eval.metrics: w1_exact needs a 1-D world");
  }
  p.throw_if_any();
  return cfg;
}

std::string canonical_text(const ExperimentConfig& cfg) {
  std::ostringstream s;
  render_train(s, "base", cfg.base);
  s << "eval.metrics = " << join(cfg.metrics) << "\n";
  s << "eval.mmd_max_points = " << cfg.eval.mmd_max_points << "\n";
  s << "eval.projection_seed = " << cfg.eval.projection_seed << "\n";
  s << "eval.projections = " << cfg.eval.projections << "\n";
  s << "eval.radius_sigmas = " << format_double(cfg.eval.radius_sigmas) << "\n";
  if (!cfg.conditions.empty()) {
    s << "experiment.conditions = " << join_map(cfg.conditions, [](int v) { return std::to_string(v); }) << "\n";
  }
  s << "experiment.seeds = " << join_map(cfg.seeds, [](std::uint64_t v) { return std::to_string(v); }) << "\n";
  s << "experiment.unconditional = " << (cfg.unconditional ? "true" : "false") << "\n";
  render_train(s, "finetune", cfg.finetune);
  s << "model.coarse_width = " << cfg.coarse_width << "\n";
  s << "model.fine_width = " << cfg.fine_width << "\n";
  s << "model.hidden = " << join_map(cfg.hidden, [](int v) { return std::to_string(v); }) << "\n";
  s << "model.time_freqs = " << cfg.time_freqs << "\n";
  s << "model.time_max_freq = " << format_double(cfg.time_max_freq) << "\n";
  s << "sampler.chains = " << cfg.n_chains << "\n";
  s << "sampler.steps = " << cfg.sampler_steps << "\n";
  s << "schedule.T = " << cfg.schedule.T << "\n";
  s << "schedule.beta_max = " << format_double(cfg.schedule.beta_max) << "\n";
  s << "schedule.beta_min = " << format_double(cfg.schedule.beta_min) << "\n";
  s << "schedule.kind = " << to_string(cfg.schedule.kind) << "\n";
  s << "sweep.dual_gamma1 = " << format_double(cfg.dual_gamma1) << "\n";
  s << "sweep.dual_gamma2 = " << join_map(cfg.dual_gamma2, [](double v) { return format_double(v); }) << "\n";
  s << "sweep.gammas = " << join_map(cfg.gammas, [](double v) { return format_double(v); }) << "\n";
  s << "sweep.modes = " << join_map(cfg.modes, [](GuidanceMode m) { return std::string(to_string(m)); }) << "\n";
  s << "world.full = " << cfg.full_world << "\n";
  s << "world.narrow = " << cfg.narrow_world << "\n";
  return s.str();
}

std::string experiment_key_reference() {
  const ExperimentConfig d;
  return canonical_text(d) + "output.dir = " + d.output_dir +
         "\n# optional: base.checkpoint, finetune.checkpoint, experiment.conditions\n";
}

std::string config_digest(const ExperimentConfig& cfg) {
  Fnv1a h;
  h.update(canonical_text(cfg));
  // Contents, not names, of world files and checkpoints feed the digest.
  h.update(to_json(resolve_world(cfg.full_world)));
  h.update(to_json(resolve_world(cfg.narrow_world)));
  for (const auto* t : {&cfg.base, &cfg.finetune}) {
    if (!t->checkpoint.empty()) h.update(read_file(t->checkpoint));
  }
  return h.hex();
}

std::string output_root(const ExperimentConfig& cfg) {
  const char* env = std::getenv("CFGLAB_OUT");
  return env && *env ? std::string(env) : cfg.output_dir;
}

Architecture architecture_for(const ExperimentConfig& cfg) {
  const GaussianMixture full = resolve_world(cfg.full_world);
  Architecture a;
  a.dim = full.dim();
  a.hidden = cfg.hidden;
  a.time_freqs = cfg.time_freqs;
  a.time_max_freq = cfg.time_max_freq;
  a.num_steps = cfg.schedule.T;
  a.coarse_vocab = full.coarse_vocab();
  a.fine_vocab = full.fine_vocab();
  a.coarse_width = cfg.coarse_width;
  a.fine_width = cfg.fine_width;
  return a;
}

std::vector<int> condition_labels(const ExperimentConfig& cfg) {
  if (!cfg.conditions.empty()) return cfg.conditions;
  std::set<int> fines;
  for (const auto& c : resolve_world(cfg.narrow_world).components()) fines.insert(c.fine);
  return {fines.begin(), fines.end()};
}

void sort_rows(std::vector<ResultRow>& rows) {
  auto key = [](const ResultRow& r) {
    return std::make_tuple(r.seed, mode_rank(r.mode), r.mode, r.gamma, r.gamma2, r.condition,
                           metric_rank(r.metric), r.metric, r.run_id);
  };
  std::stable_sort(rows.begin(), rows.end(), [&](const ResultRow& a, const ResultRow& b) { return key(a) < key(b); });
}

std::string results_to_csv(const std::vector<ResultRow>& rows) {
  std::ostringstream s;
  s << kResultsHeader << "\n";
  for (const auto& r : rows) {
    s << r.run_id << "," << r.config_digest << "," << r.seed << "," << r.mode << "," << opt_double(r.gamma) << ","
      << opt_double(r.gamma2) << "," << r.world << "," << r.condition << "," << r.metric << ","
      << format_double(r.value) << "," << r.n_chains << "," << r.steps << "\n";
  }
  return s.str();
}

namespace {

/// Comma split that keeps empty fields.
std::vector<std::string> csv_fields(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

std::optional<double> parse_opt(const std::string& s, const char* what) {
  if (trim(s).empty()) return std::nullopt;
  return parse_double(s, what);
}

}  // namespace

std::vector<ResultRow> results_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || trim(line) != kResultsHeader) {
    fail(ErrorCode::kInvalidConfig, "results CSV: unexpected header");
  }
  std::vector<ResultRow> rows;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto f = csv_fields(line);
    if (f.size() != 12) fail(ErrorCode::kInvalidConfig, "results CSV: expected 12 fields in '" + line + "'");
    ResultRow r;
    r.run_id = f[0];
    r.config_digest = f[1];
    r.seed = static_cast<std::uint64_t>(parse_int(f[2], "seed"));
    r.mode = f[3];
    r.gamma = parse_opt(f[4], "gamma");
    r.gamma2 = parse_opt(f[5], "gamma2");
    r.world = f[6];
    r.condition = f[7];
    r.metric = f[8];
    r.value = parse_double(f[9], "value");
    r.n_chains = static_cast<int>(parse_int(f[10], "n_chains"));
    r.steps = static_cast<int>(parse_int(f[11], "steps"));
    rows.push_back(std::move(r));
  }
  return rows;
}

double RunTiming::mean_step_ms() const {
  if (step_ms.empty()) return 0.0;
  double acc = 0.0;
  for (double v : step_ms) acc += v;
  return acc / static_cast<double>(step_ms.size());
}

std::string timings_to_csv(const std::vector<RunTiming>& runs) {
  std::ostringstream s;
  s << "run_id,mode,steps,n_chains,evaluations_per_step,mean_step_ms\n";
  for (const auto& r : runs) {
    s << r.run_id << "," << r.mode << "," << r.steps << "," << r.n_chains << "," << r.evaluations_per_step << ","
      << format_double(r.mean_step_ms()) << "\n";
  }
  return s.str();
}

std::vector<RunTiming> timings_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  std::vector<RunTiming> runs;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto f = csv_fields(line);
    if (f.size() != 6) fail(ErrorCode::kInvalidConfig, "timings CSV: expected 6 fields in '" + line + "'");
    RunTiming r;
    r.run_id = f[0];
    r.mode = f[1];
    r.steps = static_cast<int>(parse_int(f[2], "steps"));
    r.n_chains = static_cast<int>(parse_int(f[3], "n_chains"));
    r.evaluations_per_step = static_cast<int>(parse_int(f[4], "evaluations_per_step"));
    r.step_ms = {parse_double(f[5], "mean_step_ms")};
    runs.push_back(std::move(r));
  }
  return runs;
}

std::optional<double> OverheadReport::ratio(const std::string& numerator, const std::string& denominator) const {
  const auto n = mean_step_ms.find(numerator);
  const auto d = mean_step_ms.find(denominator);
  if (n == mean_step_ms.end() || d == mean_step_ms.end() || !(d->second > 0.0)) return std::nullopt;
  return n->second / d->second;
}

OverheadReport overhead_report(const std::vector<RunTiming>& runs) {
  if (runs.size() < 2) fail(ErrorCode::kMismatchedRuns, "overhead report needs at least two runs");
  for (const auto& r : runs) {
    if (r.steps != runs.front().steps || r.n_chains != runs.front().n_chains) {
      fail(ErrorCode::kMismatchedRuns, "run '" + r.run_id + "' differs from '" + runs.front().run_id +
                                           "' in steps or chain count");
    }
  }
  std::map<std::string, std::pair<double, int>> acc;
  for (const auto& r : runs) {
    auto& [sum, count] = acc[r.mode];
    sum += r.mean_step_ms();
    ++count;
  }
  OverheadReport rep;
  for (const auto& [mode, sc] : acc) rep.mean_step_ms[mode] = sc.first / sc.second;
  return rep;
}

std::map<CellKey, std::map<std::uint64_t, double>> per_seed_values(const std::vector<ResultRow>& rows,
                                                                   const std::string& metric) {
  std::map<CellKey, std::map<std::uint64_t, std::pair<double, int>>> acc;
  std::set<std::pair<CellKey, std::uint64_t>> failed;
  for (const auto& r : rows) {
    const CellKey key{r.mode, r.gamma, r.gamma2};
    if (r.metric.rfind("error:", 0) == 0) {
      failed.insert({key, r.seed});
    } else if (r.metric == metric) {
      auto& [sum, count] = acc[key][r.seed];
      sum += r.value;
      ++count;
    }
  }
  std::map<CellKey, std::map<std::uint64_t, double>> out;
  for (const auto& [key, seeds] : acc) {
    for (const auto& [seed, sc] : seeds) {
      if (!failed.count({key, seed})) out[key][seed] = sc.first / sc.second;
    }
  }
  return out;
}

double median(std::vector<double> values) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

std::vector<Comparison> compare_replacement(const std::vector<ResultRow>& rows, const std::string& metric) {
  const auto values = per_seed_values(rows, metric);
  std::vector<Comparison> out;
  for (const auto& [key, vanilla_seeds] : values) {
    std::string partner;
    if (key.mode == "cfg") partner = "replacement_cfg";
    if (key.mode == "dual_cfg") partner = "dual_replacement_cfg";
    if (partner.empty()) continue;
    const auto it = values.find(CellKey{partner, key.gamma, key.gamma2});
    if (it == values.end()) continue;
    Comparison c;
    c.vanilla = key;
    c.replacement = it->first;
    std::vector<double> rel;
    for (const auto& [seed, v] : vanilla_seeds) {
      const auto r = it->second.find(seed);
      if (r == it->second.end()) continue;
      c.seeds.push_back(seed);
      c.vanilla_values.push_back(v);
      c.replacement_values.push_back(r->second);
      rel.push_back(v > 0.0 ? (v - r->second) / v : 0.0);
      if (r->second < v) ++c.seeds_improved;
    }
    c.relative_improvements = rel;
    c.median_vanilla = median(c.vanilla_values);
    c.median_replacement = median(c.replacement_values);
    c.median_relative_improvement = median(rel);
    out.push_back(std::move(c));
  }
  return out;
}

std::string render_summary(const std::vector<ResultRow>& rows, const std::optional<OverheadReport>& overhead) {
  std::ostringstream s;
  std::set<std::string> digests;
  std::set<std::uint64_t> seeds;
  std::vector<std::string> metrics;
  int errors = 0;
  for (const auto& r : rows) {
    digests.insert(r.config_digest);
    seeds.insert(r.seed);
    if (r.metric.rfind("error:", 0) == 0) {
      ++errors;
    } else if (std::find(metrics.begin(), metrics.end(), r.metric) == metrics.end()) {
      metrics.push_back(r.metric);
    }
  }
  std::sort(metrics.begin(), metrics.end(), [](const auto& a, const auto& b) { return metric_rank(a) < metric_rank(b); });
  s << "# Guidance sweep summary\n\n";
  s << "- config digest: " << join({digests.begin(), digests.end()}) << "\n";
  s << "- seeds: " << seeds.size() << "\n";
  s << "- result rows: " << rows.size() << " (" << errors << " error rows)\n\n";
  s << "Values are medians over seeds of the per-seed mean over conditions.\n";
  for (const auto& m : metrics) {
    s << "\n## " << m << "\n\n";
    s << "| mode | gamma | gamma2 | median | min | max | seeds |\n";
    s << "|---|---|---|---|---|---|---|\n";
    for (const auto& [key, per] : per_seed_values(rows, m)) {
      std::vector<double> v;
      for (const auto& [seed, x] : per) v.push_back(x);
      s << "| " << key.mode << " | " << opt_double(key.gamma) << " | " << opt_double(key.gamma2) << " | "
        << short_double(median(v)) << " | " << short_double(*std::min_element(v.begin(), v.end())) << " | "
        << short_double(*std::max_element(v.begin(), v.end())) << " | " << v.size() << " |\n";
    }
  }
  const auto comps = compare_replacement(rows, "sliced_w");
  if (!comps.empty()) {
    s << "\n## Base-prior replacement vs vanilla guidance (sliced_w)\n\n";
    s << "| vanilla | gamma | gamma2 | vanilla median | replacement median | median relative improvement | seeds improved |\n";
    s << "|---|---|---|---|---|---|---|\n";
    for (const auto& c : comps) {
      s << "| " << c.vanilla.mode << " | " << opt_double(c.vanilla.gamma) << " | " << opt_double(c.vanilla.gamma2)
        << " | " << short_double(c.median_vanilla) << " | " << short_double(c.median_replacement) << " | "
        << short_double(c.median_relative_improvement) << " | " << c.seeds_improved << "/" << c.seeds.size()
        << " |\n";
    }
  }
  if (overhead) {
    s << "\n## Per-step wall time\n\n| mode | mean ms per step |\n|---|---|\n";
    for (const auto& [mode, ms] : overhead->mean_step_ms) s << "| " << mode << " | " << short_double(ms) << " |\n";
    for (const char* num : {"replacement_cfg", "dual_cfg", "dual_replacement_cfg"}) {
      if (const auto r = overhead->ratio(num, "cfg")) s << "\n" << num << " / cfg = " << short_double(*r) << "\n";
    }
  }
  return s.str();
}

std::string plot_csv(const std::vector<ResultRow>& rows, const std::string& metric) {
  const auto values = per_seed_values(rows, metric);
  std::vector<std::string> series;
  std::set<double> xs;
  std::map<std::pair<std::string, double>, double> cell;
  for (const auto& [key, per] : values) {
    const auto x = key.gamma2 ? key.gamma2 : key.gamma;
    if (!x) continue;
    if (std::find(series.begin(), series.end(), key.mode) == series.end()) series.push_back(key.mode);
    std::vector<double> v;
    for (const auto& [seed, y] : per) v.push_back(y);
    xs.insert(*x);
    cell[{key.mode, *x}] = median(v);
  }
  std::sort(series.begin(), series.end(), [](const auto& a, const auto& b) { return mode_rank(a) < mode_rank(b); });
  std::ostringstream s;
  s << "gamma";
  for (const auto& m : series) s << "," << m;
  s << "\n";
  for (double x : xs) {
    s << format_double(x);
    for (const auto& m : series) {
      const auto it = cell.find({m, x});
      s << "," << (it == cell.end() ? std::string() : format_double(it->second));
    }
    s << "\n";
  }
  return s.str();
}

namespace {

std::shared_ptr<const Denoiser> stage_net(const ExperimentConfig& cfg, const TrainSettings& settings,
                                          const GaussianMixture& world, const Schedule& schedule,
                                          const Architecture& arch, const Denoiser* base, std::uint64_t seed,
                                          const fs::path& ckpt_path, const fs::path& loss_path) {
  (void)cfg;
  if (!settings.checkpoint.empty()) {
    Checkpoint ck = load_checkpoint(settings.checkpoint);
    if (!(ck.net.arch() == arch)) {
      fail(ErrorCode::kArchitectureMismatch, "checkpoint '" + settings.checkpoint + "' has a different architecture");
    }
    return std::make_shared<const Denoiser>(std::move(ck.net));
  }
  TrainConfig tc{world, schedule, settings.steps, settings.batch, settings.lr,
                 settings.drop_coarse, settings.drop_fine, seed};
  TrainResult res = base ? finetune(*base, tc) : train(tc, arch);
  save_checkpoint(ckpt_path.string(), {res.net, schedule.params(), seed});
  std::ostringstream loss;
  loss << "step,loss\n";
  for (std::size_t i = 0; i < res.losses.size(); ++i) loss << i << "," << format_double(res.losses[i]) << "\n";
  write_file(loss_path, loss.str());
  return std::make_shared<const Denoiser>(std::move(res.net));
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  ExperimentResult result;
  result.digest = config_digest(cfg);
  const fs::path dir = fs::path(output_root(cfg)) / result.digest;
  result.out_dir = dir.string();
  std::error_code ec;
  fs::create_directories(dir / "checkpoints", ec);
  fs::create_directories(dir / "runs", ec);
  if (ec) fail(ErrorCode::kIo, "cannot create '" + dir.string() + "': " + ec.message());
  write_file(dir / "config.cfg", canonical_text(cfg));
  Log log(dir / "timings.log");
  log.line("start digest=" + result.digest + " seeds=" + std::to_string(cfg.seeds.size()));

  const auto schedule = std::make_shared<const Schedule>(Schedule::build(cfg.schedule));
  const GaussianMixture full = resolve_world(cfg.full_world);
  const GaussianMixture narrow = resolve_world(cfg.narrow_world);
  const Architecture arch = architecture_for(cfg);
  const std::vector<int> labels = condition_labels(cfg);
  const std::vector<Cell> cells = enumerate_cells(cfg);

  auto row_base = [&](std::uint64_t seed, const Cell& cell, const std::string& cond, const std::string& world) {
    ResultRow r;
    r.config_digest = result.digest;
    r.seed = seed;
    r.mode = cell.mode;
    r.gamma = cell.gamma;
    r.gamma2 = cell.gamma2;
    r.world = world;
    r.condition = cond;
    r.n_chains = cfg.n_chains;
    r.steps = cfg.sampler_steps;
    return r;
  };
  struct Target {
    std::optional<int> coarse;
    std::optional<int> fine;
    std::string tag;
  };
  auto targets_of = [&](const Cell& cell) {
    std::vector<Target> out;
    if (!cell.guidance) {
      out.push_back({std::nullopt, std::nullopt, "none"});
      return out;
    }
    for (int f : labels) {
      if (is_dual(*cell.guidance)) {
        const int c = first_coarse_of(full, f);
        out.push_back({c, f, "c" + std::to_string(c) + "f" + std::to_string(f)});
      } else {
        out.push_back({std::nullopt, f, "f" + std::to_string(f)});
      }
    }
    return out;
  };
  auto failure_rows = [&](std::uint64_t seed, const Cell& cell, const std::string& code) {
    std::vector<Target> targets;
    try {
      targets = targets_of(cell);
    } catch (const std::exception&) {
      targets = {{std::nullopt, std::nullopt, "none"}};
    }
    for (const auto& t : targets) {
      ResultRow r = row_base(seed, cell, cond_text(t.coarse, t.fine), cfg.full_world);
      r.run_id = run_id(seed, cell, t.tag);
      r.metric = "error:" + code;
      r.value = std::numeric_limits<double>::quiet_NaN();
      result.rows.push_back(std::move(r));
    }
    ++result.failed_cells;
  };

  for (std::uint64_t seed : cfg.seeds) {
    std::shared_ptr<const Denoiser> base, ft;
    const std::string stem = "seed" + std::to_string(seed);
    try {
      auto t0 = std::chrono::steady_clock::now();
      base = stage_net(cfg, cfg.base, full, *schedule, arch, nullptr, stage_seed(seed, Stage::kBase),
                       dir / "checkpoints" / (stem + "_base.ckpt"), dir / "checkpoints" / (stem + "_base_loss.csv"));
      log.line("train seed=" + std::to_string(seed) + " stage=base ms=" + format_double(ms_since(t0)));
      t0 = std::chrono::steady_clock::now();
      ft = stage_net(cfg, cfg.finetune, narrow, *schedule, arch, base.get(), stage_seed(seed, Stage::kFinetune),
                     dir / "checkpoints" / (stem + "_ft.ckpt"), dir / "checkpoints" / (stem + "_ft_loss.csv"));
      log.line("train seed=" + std::to_string(seed) + " stage=finetune ms=" + format_double(ms_since(t0)));
    } catch (const std::exception& e) {
      log.line("failure seed=" + std::to_string(seed) + " stage=train code=" + error_code_of(e) + " msg=" + e.what());
      for (const auto& cell : cells) failure_rows(seed, cell, error_code_of(e));
      continue;
    }

    std::map<std::string, Samples> references;
    // Dual targets share the fine label's reference with single ones.
    auto reference = [&](const Target& t) -> const Samples& {
      const std::uint64_t index = t.fine ? 1 + static_cast<std::uint64_t>(*t.fine) : 0;
      const std::string key = t.fine ? "f" + std::to_string(*t.fine) : "none";
      auto shared = references.find(key);
      if (shared == references.end()) {
        shared = references
                     .emplace(key, sample(full, cfg.n_chains, stage_seed(seed, Stage::kReference, index),
                                          std::nullopt, t.fine)
                                       .x)
                     .first;
      }
      return shared->second;
    };

    for (const auto& cell : cells) {
      try {
        std::vector<ResultRow> cell_rows;
        std::vector<RunTiming> cell_timings;
        for (const auto& t : targets_of(cell)) {
          const auto t0 = std::chrono::steady_clock::now();
          SamplerConfig sc;
          sc.num_steps = cfg.sampler_steps;
          sc.n_chains = cfg.n_chains;
          sc.seed = stage_seed(seed, Stage::kSampler);
          sc.spec = cell_spec(cell, base, ft, t.coarse.value_or(kNullLabel), t.fine.value_or(kNullLabel));
          const RunRecord rec = sample_run(sc, *schedule);
          const std::string id = run_id(seed, cell, t.tag);
          save_run_record((dir / "runs" / (id + ".txt")).string(), rec);
          const GaussianMixture target_world = t.fine ? restrict(full, std::nullopt, t.fine) : full;
          for (const auto& [metric, value] :
               metric_values(cfg.metrics, rec.samples, reference(t), target_world, cfg.eval)) {
            ResultRow r = row_base(seed, cell, cond_text(t.coarse, t.fine), cfg.full_world);
            r.run_id = id;
            r.metric = metric;
            r.value = value;
            cell_rows.push_back(std::move(r));
          }
          cell_timings.push_back({id, cell.mode, cfg.sampler_steps, cfg.n_chains, rec.evaluations_per_step,
                                  rec.step_ms});
          log.line("run id=" + id + " ms=" + format_double(ms_since(t0)));
        }
        result.rows.insert(result.rows.end(), cell_rows.begin(), cell_rows.end());
        result.timings.insert(result.timings.end(), cell_timings.begin(), cell_timings.end());
      } catch (const std::exception& e) {
        log.line("failure seed=" + std::to_string(seed) + " cell=" + run_id(seed, cell, "all") +
                 " code=" + error_code_of(e) + " msg=" + e.what());
        failure_rows(seed, cell, error_code_of(e));
      }
    }
  }

  sort_rows(result.rows);
  write_file(dir / "results.csv", results_to_csv(result.rows));
  write_file(dir / "timings.csv", timings_to_csv(result.timings));
  write_report(result.out_dir);
  log.line("done rows=" + std::to_string(result.rows.size()) + " failed_cells=" + std::to_string(result.failed_cells));
  return result;
}

std::string write_report(const std::string& out_dir) {
  const fs::path dir(out_dir);
  const auto rows = results_from_csv(read_file(dir / "results.csv"));
  std::optional<OverheadReport> overhead;
  if (fs::exists(dir / "timings.csv")) {
    try {
      overhead = overhead_report(timings_from_csv(read_file(dir / "timings.csv")));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kMismatchedRuns) throw;
    }
  }
  const std::string summary = render_summary(rows, overhead);
  write_file(dir / "summary.md", summary);
  write_file(dir / "plot_sliced_w.csv", plot_csv(rows, "sliced_w"));
  write_file(dir / "plot_mmd_rbf.csv", plot_csv(rows, "mmd_rbf"));
  return summary;
}

namespace {

Condition labels_from(const Config& c, const std::string& prefix, Condition fallback) {
  return {c.get_int(prefix + "coarse", fallback.coarse), c.get_int(prefix + "fine", fallback.fine)};
}

}  // namespace

GuidanceSpec guidance_spec_from(const Config& c, const Schedule& schedule) {
  GuidanceSpec spec;
  spec.mode = parse_guidance_mode(c.get_string("guidance.mode", "cfg"));
  spec.gamma = c.get_double("guidance.gamma", spec.gamma);
  spec.gamma1 = c.get_double("guidance.gamma1", spec.gamma1);
  spec.gamma2 = c.get_double("guidance.gamma2", spec.gamma2);
  if (const auto iv = c.get_ints("guidance.interval", {}); !iv.empty()) {
    if (iv.size() != 2) fail(ErrorCode::kInvalidConfig, "guidance.interval expects 'lo,hi'");
    spec.interval = std::make_pair(iv[0], iv[1]);
  }

  std::map<std::string, std::shared_ptr<const Denoiser>> nets;
  auto load_net = [&](const std::string& path) {
    auto it = nets.find(path);
    if (it == nets.end()) {
      it = nets.emplace(path, std::make_shared<const Denoiser>(load_checkpoint(path).net)).first;
    }
    return it->second;
  };
  auto label_of = [](const std::string& path) { return fs::path(path).stem().string(); };
  const Condition cond = labels_from(c, "guidance.", {});

  std::vector<std::string> names;
  switch (spec.mode) {
    case GuidanceMode::kCfg: names = {"uncond", "cond"}; break;
    case GuidanceMode::kReplacementCfg: names = {"base_uncond", "cond"}; break;
    case GuidanceMode::kDualCfg: names = {"uncond00", "cond10", "cond11"}; break;
    case GuidanceMode::kDualReplacementCfg: names = {"base_uncond", "cond10", "cond11"}; break;
  }
  for (const auto& name : names) {
    const std::string prefix = "guidance.source." + name + ".";
    if (const auto kind = c.find(prefix + "kind")) {
      const Condition sc = labels_from(c, prefix, {});
      if (*kind == "network") {
        const auto path = c.find(prefix + "checkpoint");
        if (!path) fail(ErrorCode::kInvalidConfig, prefix + "checkpoint is required for a network source");
        spec.sources.emplace(name, NoiseSource::network(load_net(*path), sc, label_of(*path)));
      } else if (*kind == "oracle") {
        const std::string world = c.get_string(prefix + "world", "ring8");
        spec.sources.emplace(name, NoiseSource::oracle(std::make_shared<const GaussianMixture>(resolve_world(world)),
                                                       std::make_shared<const Schedule>(schedule), sc, world));
      } else {
        fail(ErrorCode::kInvalidConfig, prefix + "kind must be 'network' or 'oracle'");
      }
      continue;
    }
    const bool from_base = name == "base_uncond";
    const std::string key = from_base ? "guidance.base_checkpoint" : "guidance.checkpoint";
    const auto path = c.find(key);
    if (!path) fail(ErrorCode::kInvalidConfig, key + " is required for source '" + name + "'");
    Condition sc;
    if (name == "cond") sc = cond;
    if (name == "cond10") sc = {cond.coarse, kNullLabel};
    if (name == "cond11") sc = cond;
    spec.sources.emplace(name, NoiseSource::network(load_net(*path), sc, label_of(*path)));
  }
  validate(spec);
  return spec;
}

}  // namespace cfglab
