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

#include "cfglab/denoiser.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "cfglab/config.hpp"
#include "cfglab/kernels.hpp"
#include "cfglab/rng.hpp"

namespace cfglab {

namespace {

void validate(const Architecture& a) {
  if (a.dim < 1 || a.time_freqs < 1 || a.num_steps < 1 || a.coarse_vocab < 0 ||
      a.fine_vocab < 0 || a.coarse_width < 0 || a.fine_width < 0 || !(a.time_max_freq > 0.0)) {
    fail(ErrorCode::kInvalidParameter, "invalid denoiser architecture");
  }
  for (int h : a.hidden) {
    if (h < 1) fail(ErrorCode::kInvalidParameter, "hidden layer widths must be >= 1");
  }
}

}  // namespace

Denoiser::Denoiser(Architecture arch) : arch_(std::move(arch)) {
  validate(arch_);
  std::size_t offset = 0;
  auto add = [&](std::string name, int rows, int cols) {
    blocks_.push_back({std::move(name), offset, rows, cols});
    offset += static_cast<std::size_t>(rows) * cols;
  };
  int in = arch_.input_width();
  for (int l = 0; l < num_layers(); ++l) {
    const int out = l + 1 == num_layers() ? arch_.dim : arch_.hidden[l];
    add("layer" + std::to_string(l) + ".weight", out, in);
    add("layer" + std::to_string(l) + ".bias", out, 1);
    in = out;
  }
  add("coarse_table", arch_.coarse_vocab + 1, arch_.coarse_width);
  add("fine_table", arch_.fine_vocab + 1, arch_.fine_width);
  params_.assign(offset, 0.0);
}

Denoiser Denoiser::initialized(Architecture arch, std::uint64_t seed) {
  Denoiser net(std::move(arch));
  Stream rng = Stream::derive(seed, 0x1A17);
  for (int l = 0; l < net.num_layers(); ++l) {
    auto w = net.weight(l);
    const double a = std::sqrt(6.0 / (w.rows() + w.cols()));
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = a * (2.0 * rng.uniform() - 1.0);
  }
  for (auto table : {net.coarse_table(), net.fine_table()}) {
    for (Eigen::Index i = 0; i < table.size(); ++i) table.data()[i] = rng.normal();
  }
  return net;
}

Eigen::Map<const RowMatrix> Denoiser::weight(int layer) const {
  const auto& b = weight_block(layer);
  return {params_.data() + b.offset, b.rows, b.cols};
}
Eigen::Map<const Vector> Denoiser::bias(int layer) const {
  const auto& b = bias_block(layer);
  return {params_.data() + b.offset, b.rows};
}
Eigen::Map<const RowMatrix> Denoiser::coarse_table() const {
  const auto& b = coarse_block();
  return {params_.data() + b.offset, b.rows, b.cols};
}
Eigen::Map<const RowMatrix> Denoiser::fine_table() const {
  const auto& b = fine_block();
  return {params_.data() + b.offset, b.rows, b.cols};
}
Eigen::Map<RowMatrix> Denoiser::weight(int layer) {
  const auto& b = weight_block(layer);
  return {params_.data() + b.offset, b.rows, b.cols};
}
Eigen::Map<Vector> Denoiser::bias(int layer) {
  const auto& b = bias_block(layer);
  return {params_.data() + b.offset, b.rows};
}
Eigen::Map<RowMatrix> Denoiser::coarse_table() {
  const auto& b = coarse_block();
  return {params_.data() + b.offset, b.rows, b.cols};
}
Eigen::Map<RowMatrix> Denoiser::fine_table() {
  const auto& b = fine_block();
  return {params_.data() + b.offset, b.rows, b.cols};
}

int Denoiser::coarse_row(int label) const {
  if (label == kNullLabel) return arch_.coarse_vocab;
  if (label < 0 || label >= arch_.coarse_vocab) {
    fail(ErrorCode::kLabelOutOfRange, "coarse label " + std::to_string(label) +
                                          " outside vocab " + std::to_string(arch_.coarse_vocab));
  }
  return label;
}

int Denoiser::fine_row(int label) const {
  if (label == kNullLabel) return arch_.fine_vocab;
  if (label < 0 || label >= arch_.fine_vocab) {
    fail(ErrorCode::kLabelOutOfRange, "fine label " + std::to_string(label) +
                                          " outside vocab " + std::to_string(arch_.fine_vocab));
  }
  return label;
}

Vector Denoiser::predict_eps(const Vector& x_t, int t, Condition cond) const {
  check_dims(x_t.size(), arch_.dim, "predict_eps");
  Samples x = x_t.transpose();
  const int ts[] = {t};
  const Condition cs[] = {cond};
  return kernels::serial::predict(*this, x, ts, cs).row(0).transpose();
}

bool Denoiser::all_finite() const {
  for (double v : params_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string Denoiser::fingerprint() const {
  Fnv1a h;
  h.update(params_.data(), params_.size() * sizeof(double));
  return h.hex();
}

Vector time_embedding(const Architecture& arch, int t) {
  if (t < 0 || t >= arch.num_steps) {
    fail(ErrorCode::kInvalidParameter, "time index " + std::to_string(t) + " out of range");
  }
  const int f = arch.time_freqs;
  const double u = static_cast<double>(t) / arch.num_steps;
  Vector e(2 * f);
  for (int k = 0; k < f; ++k) {
    const double freq = f == 1 ? 1.0 : std::pow(arch.time_max_freq, static_cast<double>(k) / (f - 1));
    e[k] = std::sin(freq * u);
    e[f + k] = std::cos(freq * u);
  }
  return e;
}

double epsilon_loss(const Samples& pred, const Samples& target) {
  check_dims(pred.rows(), target.rows(), "epsilon_loss rows");
  check_dims(pred.cols(), target.cols(), "epsilon_loss cols");
  return (pred - target).squaredNorm() / static_cast<double>(pred.size());
}

LossAndGrads loss_and_grads(const Denoiser& net, const TrainBatch& batch, const Schedule& schedule) {
  return kernels::parallel::loss_and_grads(net, batch, schedule);
}

void validate(const TrainConfig& cfg) {
  if (cfg.steps < 0) fail(ErrorCode::kInvalidParameter, "train: steps must be >= 0");
  if (cfg.batch < 1) fail(ErrorCode::kInvalidParameter, "train: batch must be >= 1");
  if (!(cfg.lr > 0.0)) fail(ErrorCode::kInvalidParameter, "train: lr must be > 0");
  for (double p : {cfg.drop_coarse, cfg.drop_fine}) {
    if (!(p >= 0.0 && p <= 1.0)) fail(ErrorCode::kInvalidParameter, "train: drop rate outside [0, 1]");
  }
  if (cfg.schedule.T() < 1) fail(ErrorCode::kInvalidParameter, "train: schedule not built");
}

TrainBatch draw_batch(const TrainConfig& cfg, int step) {
  const auto& world = cfg.world;
  const int d = world.dim();
  std::vector<double> cdf(world.size());
  double acc = 0.0;
  for (std::size_t k = 0; k < world.size(); ++k) cdf[k] = (acc += world[k].weight);

  TrainBatch b{Samples(cfg.batch, d), Samples(cfg.batch, d), std::vector<int>(cfg.batch),
               std::vector<Condition>(cfg.batch)};
  Stream rng = Stream::derive(cfg.seed ^ 0x7EA1D5EEDULL, static_cast<std::uint64_t>(step));
  for (int i = 0; i < cfg.batch; ++i) {
    const double u = rng.uniform() * acc;
    std::size_t k = 0;
    while (k + 1 < cdf.size() && u >= cdf[k]) ++k;
    const Component& c = world[k];
    for (int j = 0; j < d; ++j) b.x0(i, j) = c.mean[j] + std::sqrt(c.var[j]) * rng.normal();
    for (int j = 0; j < d; ++j) b.eps(i, j) = rng.normal();
    b.t[i] = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.schedule.T())));
    // Independent dropout per slot.
    b.cond[i].coarse = rng.uniform() < cfg.drop_coarse ? kNullLabel : c.coarse;
    b.cond[i].fine = rng.uniform() < cfg.drop_fine ? kNullLabel : c.fine;
  }
  return b;
}

namespace {

TrainResult run_sgd(Denoiser net, const TrainConfig& cfg) {
  validate(cfg);
  check_dims(cfg.world.dim(), net.arch().dim, "train world");
  if (cfg.world.coarse_vocab() > net.arch().coarse_vocab ||
      cfg.world.fine_vocab() > net.arch().fine_vocab) {
    fail(ErrorCode::kLabelOutOfRange, "train: world labels exceed the network vocab");
  }
  TrainResult result{std::move(net), {}};
  result.losses.reserve(cfg.steps);
  for (int step = 0; step < cfg.steps; ++step) {
    const TrainBatch batch = draw_batch(cfg, step);
    const LossAndGrads lg = kernels::parallel::loss_and_grads(result.net, batch, cfg.schedule);
    if (!std::isfinite(lg.loss)) {
      fail(ErrorCode::kDivergence, "train: non-finite loss at step " + std::to_string(step));
    }
    auto& p = result.net.params();
    for (std::size_t i = 0; i < p.size(); ++i) p[i] -= cfg.lr * lg.grads[i];
    if (!result.net.all_finite()) {
      fail(ErrorCode::kDivergence, "train: non-finite parameters after step " + std::to_string(step));
    }
    result.losses.push_back(lg.loss);
  }
  return result;
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const Architecture& arch) {
  if (cfg.steps < 1) fail(ErrorCode::kInvalidParameter, "train: steps must be >= 1");
  return run_sgd(Denoiser::initialized(arch, cfg.seed), cfg);
}

TrainResult finetune(const Denoiser& base, const TrainConfig& cfg) {
  if (cfg.world.dim() != base.arch().dim) {
    fail(ErrorCode::kArchitectureMismatch, "finetune: world dim " + std::to_string(cfg.world.dim()) +
                                               " vs network dim " + std::to_string(base.arch().dim));
  }
  return run_sgd(base, cfg);
}

// Checkpoint text: a dotted-key header, a "[params]" marker, then for each
// block a "name rows cols" line followed by one line of values.

std::string checkpoint_to_text(const Checkpoint& ckpt) {
  const Architecture& a = ckpt.net.arch();
  std::ostringstream out;
  out << "# cfglab denoiser checkpoint\n";
  out << "format_version = " << kCheckpointFormatVersion << "\n";
  out << "dim = " << a.dim << "\n";
  out << "hidden_sizes = ";
  for (std::size_t i = 0; i < a.hidden.size(); ++i) out << (i ? "," : "") << a.hidden[i];
  out << "\n";
  out << "time_freqs = " << a.time_freqs << "\n";
  out << "time_max_freq = " << format_double(a.time_max_freq) << "\n";
  out << "num_steps = " << a.num_steps << "\n";
  out << "coarse_vocab = " << a.coarse_vocab << "\n";
  out << "fine_vocab = " << a.fine_vocab << "\n";
  out << "coarse_width = " << a.coarse_width << "\n";
  out << "fine_width = " << a.fine_width << "\n";
  out << "schedule.kind = " << to_string(ckpt.schedule.kind) << "\n";
  out << "schedule.T = " << ckpt.schedule.T << "\n";
  out << "schedule.beta_min = " << format_double(ckpt.schedule.beta_min) << "\n";
  out << "schedule.beta_max = " << format_double(ckpt.schedule.beta_max) << "\n";
  out << "seed = " << ckpt.seed << "\n";
  out << "[params]\n";
  const auto& p = ckpt.net.params();
  for (const auto& b : ckpt.net.blocks()) {
    out << b.name << " " << b.rows << " " << b.cols << "\n";
    for (std::size_t i = 0; i < b.size(); ++i) {
      out << (i ? " " : "") << format_double(p[b.offset + i]);
    }
    out << "\n";
  }
  return out.str();
}

Checkpoint checkpoint_from_text(const std::string& text) {
  const auto marker = text.find("\n[params]\n");
  if (marker == std::string::npos) fail(ErrorCode::kInvalidConfig, "checkpoint: missing [params]");
  const Config head = Config::parse(std::string_view(text).substr(0, marker), "checkpoint");
  const int version = head.get_int("format_version", -1);
  if (version != kCheckpointFormatVersion) {
    fail(ErrorCode::kInvalidConfig, "checkpoint: unsupported format_version " + std::to_string(version));
  }
  Architecture a;
  a.dim = head.get_int("dim", -1);
  a.hidden = head.get_ints("hidden_sizes", {});
  a.time_freqs = head.get_int("time_freqs", a.time_freqs);
  a.time_max_freq = head.get_double("time_max_freq", a.time_max_freq);
  a.num_steps = head.get_int("num_steps", a.num_steps);
  a.coarse_vocab = head.get_int("coarse_vocab", a.coarse_vocab);
  a.fine_vocab = head.get_int("fine_vocab", a.fine_vocab);
  a.coarse_width = head.get_int("coarse_width", a.coarse_width);
  a.fine_width = head.get_int("fine_width", a.fine_width);
  ScheduleParams sp;
  sp.kind = parse_schedule_kind(head.get_string("schedule.kind", "linear"));
  sp.T = head.get_int("schedule.T", sp.T);
  sp.beta_min = head.get_double("schedule.beta_min", sp.beta_min);
  sp.beta_max = head.get_double("schedule.beta_max", sp.beta_max);

  Checkpoint ckpt{Denoiser(a), sp, head.get_u64("seed", 0)};
  std::istringstream in(text.substr(marker + 10));
  auto& p = ckpt.net.params();
  for (const auto& b : ckpt.net.blocks()) {
    std::string name;
    int rows = 0, cols = 0;
    in >> name >> rows >> cols;
    if (!in || name != b.name || rows != b.rows || cols != b.cols) {
      fail(ErrorCode::kInvalidConfig, "checkpoint: block '" + b.name + "' header mismatch");
    }
    std::string tok;
    for (std::size_t i = 0; i < b.size(); ++i) {
      in >> tok;
      if (!in) fail(ErrorCode::kInvalidConfig, "checkpoint: block '" + b.name + "' truncated");
      p[b.offset + i] = parse_double(tok, b.name);
    }
  }
  return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kIo, "cannot write checkpoint '" + path + "'");
  out << checkpoint_to_text(ckpt);
  if (!out) fail(ErrorCode::kIo, "short write on checkpoint '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open checkpoint '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return checkpoint_from_text(ss.str());
}

}  // namespace cfglab
