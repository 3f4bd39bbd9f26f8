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
#include <string>
#include <vector>

#include "cfglab/common.hpp"
#include "cfglab/gmm.hpp"
#include "cfglab/schedule.hpp"

namespace cfglab {

/// Condition slot value meaning "null condition"; maps to the reserved
/// embedding row at index vocab.
inline constexpr int kNullLabel = -1;

struct Condition {
  int coarse = kNullLabel;
  int fine = kNullLabel;

  bool operator==(const Condition&) const = default;
};

struct Architecture {
  int dim = 2;
  std::vector<int> hidden = {128, 128, 128};
  int time_freqs = 8;          // embedding width is 2 * time_freqs
  double time_max_freq = 100;  // angular frequencies span [1, max] over t / T
  int num_steps = 1000;        // T used to scale t
  int coarse_vocab = 4;
  int fine_vocab = 8;
  int coarse_width = 8;
  int fine_width = 8;

  int time_width() const { return 2 * time_freqs; }
  int input_width() const { return dim + time_width() + coarse_width + fine_width; }
  bool operator==(const Architecture&) const = default;
};

/// A named slab of the flat parameter vector, stored row-major.
struct ParamBlock {
  std::string name;
  std::size_t offset = 0;
  int rows = 0;
  int cols = 0;
  std::size_t size() const { return static_cast<std::size_t>(rows) * cols; }
};

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Feedforward epsilon-prediction network: tanh hidden layers over
/// [x, time embedding, coarse embedding, fine embedding], linear output.
/// All parameters live in one flat vector in declared order:
/// layer{l}.weight, layer{l}.bias for each layer, then coarse_table and
/// fine_table (vocab + 1 rows each, the last row being the null condition).
class Denoiser {
 public:
  /// All parameters zero.
  explicit Denoiser(Architecture arch);
  /// Xavier-uniform weights, zero biases, N(0, 1) embedding rows.
  static Denoiser initialized(Architecture arch, std::uint64_t seed);

  const Architecture& arch() const { return arch_; }
  int num_layers() const { return static_cast<int>(arch_.hidden.size()) + 1; }
  const std::vector<ParamBlock>& blocks() const { return blocks_; }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }

  Eigen::Map<const RowMatrix> weight(int layer) const;
  Eigen::Map<const Vector> bias(int layer) const;
  Eigen::Map<const RowMatrix> coarse_table() const;
  Eigen::Map<const RowMatrix> fine_table() const;
  Eigen::Map<RowMatrix> weight(int layer);
  Eigen::Map<Vector> bias(int layer);
  Eigen::Map<RowMatrix> coarse_table();
  Eigen::Map<RowMatrix> fine_table();

  const ParamBlock& weight_block(int layer) const { return blocks_[2 * layer]; }
  const ParamBlock& bias_block(int layer) const { return blocks_[2 * layer + 1]; }
  const ParamBlock& coarse_block() const { return blocks_[2 * num_layers()]; }
  const ParamBlock& fine_block() const { return blocks_[2 * num_layers() + 1]; }

  /// Embedding-table row for a label; kLabelOutOfRange unless it is in
  /// [0, vocab) or kNullLabel.
  int coarse_row(int label) const;
  int fine_row(int label) const;

  /// Single-sample forward pass.
  Vector predict_eps(const Vector& x_t, int t, Condition cond) const;

  bool all_finite() const;
  /// FNV-1a over the raw parameter bytes.
  std::string fingerprint() const;

 private:
  Architecture arch_;
  std::vector<ParamBlock> blocks_;
  std::vector<double> params_;
};

Vector time_embedding(const Architecture& arch, int t);

/// Mean over all entries of (pred - target)^2.
double epsilon_loss(const Samples& pred, const Samples& target);

struct TrainBatch {
  Samples x0;
  Samples eps;
  std::vector<int> t;
  std::vector<Condition> cond;  // dropout already applied

  Eigen::Index size() const { return x0.rows(); }
};

struct LossAndGrads {
  double loss = 0.0;
  std::vector<double> grads;  // same layout as Denoiser::params()
};

/// Epsilon-matching loss on forward_noise(x0, t, eps) and its gradient by
/// reverse-mode accumulation.
LossAndGrads loss_and_grads(const Denoiser& net, const TrainBatch& batch, const Schedule& schedule);

struct TrainConfig {
  GaussianMixture world;
  Schedule schedule;
  int steps = 1;
  int batch = 128;
  double lr = 1e-3;
  double drop_coarse = 0.1;
  double drop_fine = 0.1;
  std::uint64_t seed = 0;
};

struct TrainResult {
  Denoiser net;
  std::vector<double> losses;
};

void validate(const TrainConfig& cfg);

/// Training batch for one step; deterministic in (seed, step).
TrainBatch draw_batch(const TrainConfig& cfg, int step);

/// Fresh network from Denoiser::initialized(arch, cfg.seed), plain SGD.
TrainResult train(const TrainConfig& cfg, const Architecture& arch);

/// Copy-then-train continuation of a base network. Zero steps returns an
/// exact copy.
TrainResult finetune(const Denoiser& base, const TrainConfig& cfg);

/// Checkpoint on disk: architecture, schedule, seed, and parameters.
struct Checkpoint {
  Denoiser net;
  ScheduleParams schedule;
  std::uint64_t seed = 0;
};

inline constexpr int kCheckpointFormatVersion = 1;

std::string checkpoint_to_text(const Checkpoint& ckpt);
Checkpoint checkpoint_from_text(const std::string& text);
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace cfglab
