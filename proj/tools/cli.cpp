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

#include "cli.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cfglab/common.hpp"
#include "cfglab/config.hpp"
#include "cfglab/denoiser.hpp"
#include "cfglab/gmm.hpp"
#include "cfglab/guidance.hpp"
#include "cfglab/harness.hpp"
#include "cfglab/metrics.hpp"
#include "cfglab/sampler.hpp"
#include "cfglab/schedule.hpp"

namespace cfglab::cli {

namespace {

constexpr const char* kFooter = R"(Configuration: every subcommand reads dotted "key = value" text from
--config, then applies --set key=value in order, then the dedicated flags.

Exit status:
  0  success
  1  unexpected internal error
  2  usage error (unknown flag, missing or malformed argument)
  3  i/o error (unreadable or unwritable path)
  4  invalid config or parameter
  5  numerical failure (divergence, degenerate time)
  6  experiment finished but some cells failed (see results.csv)

Errors print one line to stderr:
  error: code=<name> exit=<status> msg=<text>)";

int exit_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kIo: return kIoFailure;
    case ErrorCode::kDivergence:
    case ErrorCode::kDegenerateTime: return kNumerical;
    case ErrorCode::kInvalidParameter:
    case ErrorCode::kDimensionMismatch:
    case ErrorCode::kEmptyCondition:
    case ErrorCode::kLabelOutOfRange:
    case ErrorCode::kArchitectureMismatch:
    case ErrorCode::kInvalidConfig:
    case ErrorCode::kMismatchedRuns: return kBadConfig;
  }
  return kOther;
}

int report_error(std::ostream& err, const std::string& code, int status, std::string msg) {
  std::replace(msg.begin(), msg.end(), '\n', ' ');
  err << "error: code=" << code << " exit=" << status << " msg=" << msg << "\n";
  return status;
}

/// Config file, --set assignments and flag overrides of one subcommand.
struct Invocation {
  std::string config_path;
  std::vector<std::string> sets;
  std::map<std::string, std::string> flags;
  std::vector<std::string> allowed_prefixes;

  Config resolve() const {
    Config cfg = config_path.empty() ? Config() : Config::load(config_path);
    for (const auto& s : sets) cfg.set_assignment(s);
    for (const auto& [k, v] : flags) cfg.set(k, v);
    if (!allowed_prefixes.empty()) {
      std::vector<std::string> unknown;
      for (const auto& [k, v] : cfg.values()) {
        const bool ok = std::any_of(allowed_prefixes.begin(), allowed_prefixes.end(), [&](const std::string& p) {
          return p.back() == '.' ? k.rfind(p, 0) == 0 : k == p;
        });
        if (!ok) unknown.push_back(k);
      }
      if (!unknown.empty()) {
        std::string msg = "unknown key(s):";
        for (const auto& k : unknown) msg += " " + k;
        fail(ErrorCode::kInvalidConfig, msg);
      }
    }
    return cfg;
  }
};

CLI::App* add_command(CLI::App& app, const char* name, const char* desc, Invocation& inv) {
  CLI::App* sub = app.add_subcommand(name, desc);
  sub->add_option("--config", inv.config_path, "structured-text config file");
  sub->add_option("--set", inv.sets, "override, key=value (repeatable)");
  sub->footer(kFooter);
  return sub;
}

void flag_key(CLI::App* sub, Invocation& inv, const std::string& flag, const std::string& key, const std::string& desc) {
  sub->add_option_function<std::string>(flag, [&inv, key](const std::string& v) { inv.flags[key] = v; },
                                        desc + " [" + key + "]");
}

void switch_key(CLI::App* sub, Invocation& inv, const std::string& flag, const std::string& key, const std::string& desc) {
  sub->add_flag_function(flag, [&inv, key](std::int64_t) { inv.flags[key] = "true"; }, desc + " [" + key + "]");
}

ScheduleParams schedule_from(const Config& c) {
  ScheduleParams p;
  p.kind = parse_schedule_kind(c.get_string("schedule.kind", "linear"));
  p.T = c.get_int("schedule.T", p.T);
  p.beta_min = c.get_double("schedule.beta_min", p.beta_min);
  p.beta_max = c.get_double("schedule.beta_max", p.beta_max);
  return p;
}

Architecture architecture_from(const Config& c, const GaussianMixture& world, int T) {
  Architecture a;
  a.dim = world.dim();
  a.hidden = c.get_ints("model.hidden", a.hidden);
  a.time_freqs = c.get_int("model.time_freqs", a.time_freqs);
  a.time_max_freq = c.get_double("model.time_max_freq", a.time_max_freq);
  a.num_steps = T;
  a.coarse_vocab = c.get_int("model.coarse_vocab", world.coarse_vocab());
  a.fine_vocab = c.get_int("model.fine_vocab", world.fine_vocab());
  a.coarse_width = c.get_int("model.coarse_width", a.coarse_width);
  a.fine_width = c.get_int("model.fine_width", a.fine_width);
  return a;
}

TrainConfig train_config_from(const Config& c, const GaussianMixture& world, const Schedule& schedule) {
  return TrainConfig{world,
                     schedule,
                     c.get_int("train.steps", 1000),
                     c.get_int("train.batch", 128),
                     c.get_double("train.lr", 1e-3),
                     c.get_double("train.drop_coarse", 0.1),
                     c.get_double("train.drop_fine", 0.1),
                     c.get_u64("train.seed", 0)};
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kIo, "cannot write '" + path + "'");
  out << text;
}

void finish_training(const TrainResult& res, const TrainConfig& tc, const Config& c, const std::string& default_out,
                     std::ostream& out) {
  const std::string path = c.get_string("train.out", default_out);
  save_checkpoint(path, {res.net, tc.schedule.params(), tc.seed});
  const std::string loss_path = c.get_string("train.loss_out", path + ".loss.csv");
  std::ostringstream loss;
  loss << "step,loss\n";
  for (std::size_t i = 0; i < res.losses.size(); ++i) loss << i << "," << format_double(res.losses[i]) << "\n";
  write_text(loss_path, loss.str());
  out << "checkpoint " << path << "\nloss_curve " << loss_path << "\nfingerprint " << res.net.fingerprint() << "\n";
}

int cmd_train(const Invocation& inv, std::ostream& out) {
  const Config c = inv.resolve();
  const GaussianMixture world = resolve_world(c.get_string("world", "ring8"));
  const Schedule schedule = Schedule::build(schedule_from(c));
  const TrainConfig tc = train_config_from(c, world, schedule);
  const TrainResult res = train(tc, architecture_from(c, world, schedule.T()));
  finish_training(res, tc, c, "base.ckpt", out);
  return kOk;
}

int cmd_finetune(const Invocation& inv, std::ostream& out) {
  const Config c = inv.resolve();
  const auto from = c.find("finetune.from");
  if (!from) fail(ErrorCode::kInvalidConfig, "finetune needs --checkpoint (finetune.from)");
  const Checkpoint base = load_checkpoint(*from);
  const GaussianMixture world = resolve_world(c.get_string("world", "narrow2"));
  const Schedule schedule = Schedule::build(base.schedule);
  const TrainConfig tc = train_config_from(c, world, schedule);
  const TrainResult res = finetune(base.net, tc);
  finish_training(res, tc, c, "ft.ckpt", out);
  return kOk;
}

int cmd_sample(const Invocation& inv, std::ostream& out) {
  const Config c = inv.resolve();
  std::optional<std::string> ckpt = c.find("guidance.checkpoint");
  if (!ckpt) ckpt = c.find("guidance.base_checkpoint");
  const ScheduleParams sp = ckpt && !c.has("schedule.T") ? load_checkpoint(*ckpt).schedule : schedule_from(c);
  const Schedule schedule = Schedule::build(sp);
  SamplerConfig sc;
  sc.spec = guidance_spec_from(c, schedule);
  sc.num_steps = c.get_int("sample.steps", 50);
  sc.n_chains = c.get_int("sample.chains", 4000);
  sc.seed = c.get_u64("sample.seed", 0);
  sc.record_trajectory = c.get_bool("sample.trajectory", false);
  const RunRecord rec = sample_run(sc, schedule);
  const std::string path = c.get_string("sample.out", "run.txt");
  save_run_record(path, rec);
  double total = 0.0;
  for (double ms : rec.step_ms) total += ms;
  out << "run_record " << path << "\ndigest " << rec.digest << "\nguidance " << rec.description
      << "\nmean_step_ms " << format_double(total / rec.step_ms.size()) << "\n";
  return kOk;
}

int cmd_eval(const Invocation& inv, std::ostream& out) {
  const Config c = inv.resolve();
  const auto path = c.find("eval.samples");
  if (!path) fail(ErrorCode::kInvalidConfig, "eval needs --samples (eval.samples)");
  const RunRecord rec = load_run_record(*path);
  const GaussianMixture world = resolve_world(c.get_string("eval.world", "ring8"));
  const int coarse = c.get_int("eval.coarse", kNullLabel);
  const int fine = c.get_int("eval.fine", kNullLabel);
  const LabelFilter fc = coarse == kNullLabel ? LabelFilter{} : LabelFilter{coarse};
  const LabelFilter ff = fine == kNullLabel ? LabelFilter{} : LabelFilter{fine};
  const std::uint64_t seed = c.get_u64("eval.seed", 0);
  const int n = c.get_int("eval.reference_size", static_cast<int>(rec.samples.rows()));
  const Samples ref = sample(world, n, seed, fc, ff).x;
  const GaussianMixture target = restrict(world, fc, ff);
  MetricOptions opts;
  opts.projections = c.get_int("eval.projections", opts.projections);
  opts.projection_seed = c.get_u64("eval.projection_seed", opts.projection_seed);
  opts.radius_sigmas = c.get_double("eval.radius_sigmas", opts.radius_sigmas);
  opts.mmd_max_points = c.get_int("eval.mmd_max_points", static_cast<int>(opts.mmd_max_points));
  const MetricReport rep = evaluate_samples(rec.samples, ref, target, opts);

  const std::string run_id = c.get_string("eval.run_id", rec.digest);
  std::ostringstream csv;
  csv << "run_id,metric,value,n,seed\n";
  auto row = [&](const char* metric, double v) {
    csv << run_id << "," << metric << "," << format_double(v) << "," << rec.samples.rows() << "," << seed << "\n";
  };
  if (rep.w1_exact) row("w1_exact", *rep.w1_exact);
  row("sliced_w", rep.sliced_w);
  row("mmd_rbf", rep.mmd_rbf);
  row("mmd_bandwidth", rep.mmd_bandwidth);
  row("coverage", rep.modes.coverage);
  row("off_mode", rec.samples.rows() ? static_cast<double>(rep.modes.unassigned) / rec.samples.rows() : 0.0);
  for (std::size_t k = 0; k < rep.modes.counts.size(); ++k) {
    row(("mode_count_" + std::to_string(k)).c_str(), rep.modes.counts[k]);
  }
  if (const auto dest = c.find("eval.out")) {
    write_text(*dest, csv.str());
    out << "metrics " << *dest << "\n";
  } else {
    out << csv.str();
  }
  return kOk;
}

int cmd_experiment(const Invocation& inv, std::ostream& out) {
  const ExperimentConfig cfg = experiment_config_from(inv.resolve());
  const ExperimentResult res = run_experiment(cfg);
  out << "output " << res.out_dir << "\nrows " << res.rows.size() << "\nfailed_cells " << res.failed_cells << "\n";
  return res.failed_cells ? kPartial : kOk;
}

int cmd_report(const Invocation& inv, std::ostream& out) {
  const Config c = inv.resolve();
  const auto dir = c.find("report.dir");
  if (!dir) fail(ErrorCode::kInvalidConfig, "report needs --dir (report.dir)");
  out << write_report(*dir);
  return kOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"cfglab: guidance experiments on analytic mixture worlds", "cfglab"};
  app.require_subcommand(1);
  app.footer(kFooter);

  Invocation train_inv, ft_inv, sample_inv, eval_inv, exp_inv, report_inv;
  train_inv.allowed_prefixes = {"world", "schedule.", "model.", "train."};
  ft_inv.allowed_prefixes = {"world", "finetune.", "train."};
  sample_inv.allowed_prefixes = {"guidance.", "sample.", "schedule."};
  eval_inv.allowed_prefixes = {"eval."};
  report_inv.allowed_prefixes = {"report."};

  CLI::App* train_cmd = add_command(app, "train", "train a base denoiser; writes checkpoint and loss CSV", train_inv);
  flag_key(train_cmd, train_inv, "--world", "world", "preset name or mixture JSON");
  flag_key(train_cmd, train_inv, "--seed", "train.seed", "training seed");
  flag_key(train_cmd, train_inv, "--steps", "train.steps", "SGD steps");
  flag_key(train_cmd, train_inv, "--batch", "train.batch", "batch size");
  flag_key(train_cmd, train_inv, "--lr", "train.lr", "learning rate");
  flag_key(train_cmd, train_inv, "--drop-coarse", "train.drop_coarse", "coarse-label dropout");
  flag_key(train_cmd, train_inv, "--drop-fine", "train.drop_fine", "fine-label dropout");
  flag_key(train_cmd, train_inv, "--out", "train.out", "checkpoint path");

  CLI::App* ft_cmd = add_command(app, "finetune", "continue training a checkpoint on another world", ft_inv);
  flag_key(ft_cmd, ft_inv, "--checkpoint", "finetune.from", "base checkpoint");
  flag_key(ft_cmd, ft_inv, "--world", "world", "preset name or mixture JSON");
  flag_key(ft_cmd, ft_inv, "--seed", "train.seed", "training seed");
  flag_key(ft_cmd, ft_inv, "--steps", "train.steps", "SGD steps");
  flag_key(ft_cmd, ft_inv, "--lr", "train.lr", "learning rate");
  flag_key(ft_cmd, ft_inv, "--drop-coarse", "train.drop_coarse", "coarse-label dropout");
  flag_key(ft_cmd, ft_inv, "--drop-fine", "train.drop_fine", "fine-label dropout");
  flag_key(ft_cmd, ft_inv, "--out", "train.out", "checkpoint path");

  CLI::App* sample_cmd = add_command(app, "sample", "guided DDIM sampling; writes a run record", sample_inv);
  flag_key(sample_cmd, sample_inv, "--checkpoint", "guidance.checkpoint", "fine-tuned checkpoint");
  flag_key(sample_cmd, sample_inv, "--base-checkpoint", "guidance.base_checkpoint", "base checkpoint");
  flag_key(sample_cmd, sample_inv, "--mode", "guidance.mode",
           "cfg | replacement_cfg | dual_cfg | dual_replacement_cfg");
  flag_key(sample_cmd, sample_inv, "--gamma", "guidance.gamma", "guidance scale");
  flag_key(sample_cmd, sample_inv, "--gamma1", "guidance.gamma1", "dual: coarse scale");
  flag_key(sample_cmd, sample_inv, "--gamma2", "guidance.gamma2", "dual: fine scale");
  flag_key(sample_cmd, sample_inv, "--coarse", "guidance.coarse", "coarse label (-1 = null)");
  flag_key(sample_cmd, sample_inv, "--fine", "guidance.fine", "fine label (-1 = null)");
  flag_key(sample_cmd, sample_inv, "--steps", "sample.steps", "DDIM steps");
  flag_key(sample_cmd, sample_inv, "--chains", "sample.chains", "number of chains");
  flag_key(sample_cmd, sample_inv, "--seed", "sample.seed", "sampling seed");
  switch_key(sample_cmd, sample_inv, "--trajectory", "sample.trajectory", "record every step");
  flag_key(sample_cmd, sample_inv, "--out", "sample.out", "run record path");

  CLI::App* eval_cmd = add_command(app, "eval", "metrics of a run record against a world", eval_inv);
  flag_key(eval_cmd, eval_inv, "--samples", "eval.samples", "run record");
  flag_key(eval_cmd, eval_inv, "--world", "eval.world", "reference world");
  flag_key(eval_cmd, eval_inv, "--coarse", "eval.coarse", "restrict reference to a coarse label");
  flag_key(eval_cmd, eval_inv, "--fine", "eval.fine", "restrict reference to a fine label");
  flag_key(eval_cmd, eval_inv, "--seed", "eval.seed", "reference sampling seed");
  flag_key(eval_cmd, eval_inv, "--out", "eval.out", "metrics CSV path (default stdout)");

  CLI::App* exp_cmd = add_command(app, "experiment", "full train, fine-tune, sweep and report pipeline", exp_inv);
  flag_key(exp_cmd, exp_inv, "--out-dir", "output.dir", "output root (CFGLAB_OUT overrides)");
  flag_key(exp_cmd, exp_inv, "--seeds", "experiment.seeds", "comma-separated seeds");
  exp_cmd->footer(std::string("Keys and defaults:\n") + experiment_key_reference() + "\n" + kFooter);

  CLI::App* report_cmd = add_command(app, "report", "re-render summary and plot CSVs of an experiment", report_inv);
  flag_key(report_cmd, report_inv, "--dir", "report.dir", "experiment output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    return report_error(err, "usage", kUsage, e.what());
  }

  const std::vector<std::pair<CLI::App*, std::function<int()>>> commands = {
      {train_cmd, [&] { return cmd_train(train_inv, out); }},
      {ft_cmd, [&] { return cmd_finetune(ft_inv, out); }},
      {sample_cmd, [&] { return cmd_sample(sample_inv, out); }},
      {eval_cmd, [&] { return cmd_eval(eval_inv, out); }},
      {exp_cmd, [&] { return cmd_experiment(exp_inv, out); }},
      {report_cmd, [&] { return cmd_report(report_inv, out); }},
  };
  try {
    for (const auto& [sub, fn] : commands) {
      if (sub->parsed()) return fn();
    }
    return report_error(err, "usage", kUsage, "no subcommand");
  } catch (const Error& e) {
    return report_error(err, std::string(to_string(e.code())), exit_for(e.code()), e.what());
  } catch (const std::exception& e) {
    return report_error(err, "internal", kOther, e.what());
  }
}

}  // namespace cfglab::cli
