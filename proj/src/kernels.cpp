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

#include "cfglab/kernels.hpp"

#include <cmath>

namespace cfglab::kernels {

namespace {

void check_batch(const Denoiser& net, const Samples& x, std::size_t nt, std::size_t nc) {
  check_dims(x.cols(), net.arch().dim, "predict input");
  check_dims(x.rows(), static_cast<Eigen::Index>(nt), "predict time indices");
  check_dims(x.rows(), static_cast<Eigen::Index>(nc), "predict conditions");
}

void check_batch(const TrainBatch& b, int dim) {
  if (b.size() < 1) fail(ErrorCode::kInvalidParameter, "loss_and_grads: empty batch");
  check_dims(b.x0.cols(), dim, "batch x0");
  check_dims(b.eps.cols(), dim, "batch eps");
  check_dims(b.eps.rows(), b.size(), "batch eps rows");
  check_dims(static_cast<Eigen::Index>(b.t.size()), b.size(), "batch t");
  check_dims(static_cast<Eigen::Index>(b.cond.size()), b.size(), "batch cond");
}

// Writes the network input [x, temb(t), coarse row, fine row] into `out`.
void fill_input(const Denoiser& net, const double* x, const Vector& temb, Condition c, double* out) {
  const Architecture& a = net.arch();
  int k = 0;
  for (int j = 0; j < a.dim; ++j) out[k++] = x[j];
  for (Eigen::Index j = 0; j < temb.size(); ++j) out[k++] = temb[j];
  const auto ct = net.coarse_table();
  const auto ft = net.fine_table();
  const int cr = net.coarse_row(c.coarse);
  const int fr = net.fine_row(c.fine);
  for (int j = 0; j < a.coarse_width; ++j) out[k++] = ct(cr, j);
  for (int j = 0; j < a.fine_width; ++j) out[k++] = ft(fr, j);
}

// tanh through exp: Eigen vectorizes exp for doubles but not tanh.
template <class M>
void tanh_inplace(M& z) {
  z = (2.0 * z.array()).exp();
  z = 1.0 - 2.0 / (z.array() + 1.0);
}

// Dense scalar layer: out = W in + b.
void dense(const Eigen::Map<const RowMatrix>& w, const Eigen::Map<const Vector>& b,
           const std::vector<double>& in, std::vector<double>& out) {
  out.assign(w.rows(), 0.0);
  for (Eigen::Index r = 0; r < w.rows(); ++r) {
    double acc = b[r];
    for (Eigen::Index c = 0; c < w.cols(); ++c) acc += w(r, c) * in[c];
    out[r] = acc;
  }
}

}  // namespace

namespace serial {

Samples predict(const Denoiser& net, const Samples& x, std::span<const int> t,
                std::span<const Condition> cond) {
  check_batch(net, x, t.size(), cond.size());
  const Architecture& a = net.arch();
  Samples out(x.rows(), a.dim);
  std::vector<double> h(a.input_width()), z;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    h.resize(a.input_width());
    fill_input(net, x.row(i).data(), time_embedding(a, t[i]), cond[i], h.data());
    for (int l = 0; l < net.num_layers(); ++l) {
      dense(net.weight(l), net.bias(l), h, z);
      if (l + 1 < net.num_layers()) {
        for (double& v : z) v = std::tanh(v);
      }
      h.swap(z);
    }
    for (int j = 0; j < a.dim; ++j) out(i, j) = h[j];
  }
  return out;
}

Samples predict_shared(const Denoiser& net, const Samples& x, int t, Condition cond) {
  const std::vector<int> ts(x.rows(), t);
  const std::vector<Condition> cs(x.rows(), cond);
  return predict(net, x, ts, cs);
}

LossAndGrads loss_and_grads(const Denoiser& net, const TrainBatch& batch, const Schedule& schedule) {
  const Architecture& a = net.arch();
  check_batch(batch, a.dim);
  const int layers = net.num_layers();
  const double denom = static_cast<double>(batch.size()) * a.dim;
  LossAndGrads res{0.0, std::vector<double>(net.params().size(), 0.0)};
  auto& g = res.grads;

  std::vector<std::vector<double>> acts(layers + 1);
  std::vector<double> x_t(a.dim), dz, dh;
  for (Eigen::Index i = 0; i < batch.size(); ++i) {
    const double ab = schedule.alpha_bar(batch.t[i]);
    for (int j = 0; j < a.dim; ++j) {
      x_t[j] = std::sqrt(ab) * batch.x0(i, j) + std::sqrt(1.0 - ab) * batch.eps(i, j);
    }
    acts[0].resize(a.input_width());
    fill_input(net, x_t.data(), time_embedding(a, batch.t[i]), batch.cond[i], acts[0].data());
    for (int l = 0; l < layers; ++l) {
      dense(net.weight(l), net.bias(l), acts[l], acts[l + 1]);
      if (l + 1 < layers) {
        for (double& v : acts[l + 1]) v = std::tanh(v);
      }
    }
    dz.assign(a.dim, 0.0);
    for (int j = 0; j < a.dim; ++j) {
      const double diff = acts[layers][j] - batch.eps(i, j);
      res.loss += diff * diff;
      dz[j] = 2.0 * diff / denom;
    }
    for (int l = layers - 1; l >= 0; --l) {
      const auto w = net.weight(l);
      const auto& wb = net.weight_block(l);
      const auto& bb = net.bias_block(l);
      const auto& in = acts[l];
      for (Eigen::Index r = 0; r < w.rows(); ++r) {
        g[bb.offset + r] += dz[r];
        for (Eigen::Index c = 0; c < w.cols(); ++c) g[wb.offset + r * w.cols() + c] += dz[r] * in[c];
      }
      dh.assign(w.cols(), 0.0);
      for (Eigen::Index r = 0; r < w.rows(); ++r) {
        for (Eigen::Index c = 0; c < w.cols(); ++c) dh[c] += w(r, c) * dz[r];
      }
      if (l > 0) {
        dz.resize(w.cols());
        for (Eigen::Index c = 0; c < w.cols(); ++c) dz[c] = dh[c] * (1.0 - in[c] * in[c]);
      } else {
        const int base = a.dim + a.time_width();
        const auto& cb = net.coarse_block();
        const auto& fb = net.fine_block();
        const int cr = net.coarse_row(batch.cond[i].coarse);
        const int fr = net.fine_row(batch.cond[i].fine);
        for (int j = 0; j < a.coarse_width; ++j) g[cb.offset + cr * a.coarse_width + j] += dh[base + j];
        for (int j = 0; j < a.fine_width; ++j) {
          g[fb.offset + fr * a.fine_width + j] += dh[base + a.coarse_width + j];
        }
      }
    }
  }
  res.loss /= denom;
  return res;
}

double rbf_mean(const Samples& a, const Samples& b, double bandwidth) {
  check_dims(a.cols(), b.cols(), "rbf_mean");
  const double inv = 1.0 / (2.0 * bandwidth * bandwidth);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < b.rows(); ++j) {
      double s = 0.0;
      for (Eigen::Index k = 0; k < a.cols(); ++k) {
        const double diff = a(i, k) - b(j, k);
        s += diff * diff;
      }
      acc += std::exp(-s * inv);
    }
  }
  return acc / (static_cast<double>(a.rows()) * b.rows());
}

}  // namespace serial

namespace parallel {

namespace {

using ColMatrix = Eigen::MatrixXd;

// Forward through every layer, keeping activations; acts[0] is the input.
void forward_chunk(const Denoiser& net, std::vector<ColMatrix>& acts) {
  const int layers = net.num_layers();
  for (int l = 0; l < layers; ++l) {
    acts[l + 1].noalias() = net.weight(l) * acts[l];
    acts[l + 1].colwise() += net.bias(l);
    if (l + 1 < layers) tanh_inplace(acts[l + 1]);
  }
}

ColMatrix chunk_input(const Denoiser& net, const Samples& x, Eigen::Index start, Eigen::Index n,
                      std::span<const int> t, std::span<const Condition> cond) {
  const Architecture& a = net.arch();
  ColMatrix in(a.input_width(), n);
  for (Eigen::Index j = 0; j < n; ++j) {
    fill_input(net, x.row(start + j).data(), time_embedding(a, t[start + j]), cond[start + j],
               in.col(j).data());
  }
  return in;
}

}  // namespace

Samples predict(const Denoiser& net, const Samples& x, std::span<const int> t,
                std::span<const Condition> cond) {
  check_batch(net, x, t.size(), cond.size());
  const Eigen::Index n = x.rows();
  const Eigen::Index chunks = (n + kPredictChunk - 1) / kPredictChunk;
  Samples out(n, net.arch().dim);
#pragma omp parallel for schedule(static)
  for (Eigen::Index c = 0; c < chunks; ++c) {
    const Eigen::Index start = c * kPredictChunk;
    const Eigen::Index len = std::min(kPredictChunk, n - start);
    std::vector<ColMatrix> acts(net.num_layers() + 1);
    acts[0] = chunk_input(net, x, start, len, t, cond);
    forward_chunk(net, acts);
    out.middleRows(start, len) = acts.back().transpose();
  }
  return out;
}

Samples predict_shared(const Denoiser& net, const Samples& x, int t, Condition cond) {
  const Architecture& a = net.arch();
  check_dims(x.cols(), a.dim, "predict input");
  // Everything but x is shared by the batch: fold it into the first bias.
  Vector rest(a.input_width() - a.dim);
  {
    std::vector<double> full(a.input_width());
    const std::vector<double> zeros(a.dim, 0.0);
    fill_input(net, zeros.data(), time_embedding(a, t), cond, full.data());
    rest = Eigen::Map<const Vector>(full.data() + a.dim, rest.size());
  }
  const auto w0 = net.weight(0);
  const Vector bias0 = net.bias(0) + w0.rightCols(rest.size()) * rest;
  const RowMatrix w0x = w0.leftCols(a.dim);

  const Eigen::Index n = x.rows();
  const Eigen::Index chunks = (n + kPredictChunk - 1) / kPredictChunk;
  const int layers = net.num_layers();
  Samples out(n, a.dim);
#pragma omp parallel for schedule(static)
  for (Eigen::Index c = 0; c < chunks; ++c) {
    const Eigen::Index start = c * kPredictChunk;
    const Eigen::Index len = std::min(kPredictChunk, n - start);
    ColMatrix h = w0x * x.middleRows(start, len).transpose();
    h.colwise() += bias0;
    if (layers > 1) tanh_inplace(h);
    ColMatrix z;
    for (int l = 1; l < layers; ++l) {
      z.noalias() = net.weight(l) * h;
      z.colwise() += net.bias(l);
      if (l + 1 < layers) tanh_inplace(z);
      h.swap(z);
    }
    out.middleRows(start, len) = h.transpose();
  }
  return out;
}

LossAndGrads loss_and_grads(const Denoiser& net, const TrainBatch& batch, const Schedule& schedule) {
  const Architecture& a = net.arch();
  check_batch(batch, a.dim);
  const int layers = net.num_layers();
  const Eigen::Index n = batch.size();
  const double denom = static_cast<double>(n) * a.dim;
  const Eigen::Index chunks = (n + kTrainChunk - 1) / kTrainChunk;
  const std::size_t np = net.params().size();

  std::vector<std::vector<double>> partial(chunks);
  std::vector<double> partial_loss(chunks, 0.0);

  // Noised inputs for the whole batch.
  Samples x_t(n, a.dim);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double ab = schedule.alpha_bar(batch.t[i]);
    x_t.row(i) = std::sqrt(ab) * batch.x0.row(i) + std::sqrt(1.0 - ab) * batch.eps.row(i);
  }

#pragma omp parallel for schedule(static)
  for (Eigen::Index c = 0; c < chunks; ++c) {
    const Eigen::Index start = c * kTrainChunk;
    const Eigen::Index len = std::min(kTrainChunk, n - start);
    std::vector<double>& g = partial[c];
    g.assign(np, 0.0);

    std::vector<ColMatrix> acts(layers + 1);
    acts[0] = chunk_input(net, x_t, start, len, batch.t, batch.cond);
    forward_chunk(net, acts);

    const ColMatrix diff = acts[layers] - batch.eps.middleRows(start, len).transpose();
    partial_loss[c] = diff.squaredNorm();
    ColMatrix dz = (2.0 / denom) * diff;
    for (int l = layers - 1; l >= 0; --l) {
      const auto& wb = net.weight_block(l);
      const auto& bb = net.bias_block(l);
      Eigen::Map<RowMatrix> gw(g.data() + wb.offset, wb.rows, wb.cols);
      Eigen::Map<Vector> gb(g.data() + bb.offset, bb.rows);
      // Products land in owned storage first: Eigen peels unaligned
      // destinations, which would make the summation order depend on the
      // address of the gradient buffer.
      const RowMatrix pw = dz * acts[l].transpose();
      const Vector pb = dz.rowwise().sum();
      gw += pw;
      gb += pb;
      const auto w = net.weight(l);
      if (l > 0) {
        ColMatrix dh = w.transpose() * dz;
        dz = dh.array() * (1.0 - acts[l].array().square());
      } else {
        const int emb = a.coarse_width + a.fine_width;
        if (emb == 0) break;
        const ColMatrix de = w.rightCols(emb).transpose() * dz;
        const auto& cb = net.coarse_block();
        const auto& fb = net.fine_block();
        for (Eigen::Index j = 0; j < len; ++j) {
          const Condition& cond = batch.cond[start + j];
          const int cr = net.coarse_row(cond.coarse);
          const int fr = net.fine_row(cond.fine);
          for (int k = 0; k < a.coarse_width; ++k) g[cb.offset + cr * a.coarse_width + k] += de(k, j);
          for (int k = 0; k < a.fine_width; ++k) {
            g[fb.offset + fr * a.fine_width + k] += de(a.coarse_width + k, j);
          }
        }
      }
    }
  }

  LossAndGrads res{0.0, std::move(partial[0])};
  res.loss = partial_loss[0];
  for (Eigen::Index c = 1; c < chunks; ++c) {
    for (std::size_t i = 0; i < np; ++i) res.grads[i] += partial[c][i];
    res.loss += partial_loss[c];
  }
  res.loss /= denom;
  return res;
}

double rbf_mean(const Samples& a, const Samples& b, double bandwidth) {
  check_dims(a.cols(), b.cols(), "rbf_mean");
  const double inv = 1.0 / (2.0 * bandwidth * bandwidth);
  const Eigen::MatrixXd bt = b.transpose();  // d x m, one point per column
  std::vector<double> rows(a.rows());
#pragma omp parallel for schedule(static)
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    Eigen::ArrayXd s = Eigen::ArrayXd::Zero(b.rows());
    for (Eigen::Index k = 0; k < a.cols(); ++k) s += (bt.row(k).array().transpose() - a(i, k)).square();
    rows[i] = (-inv * s).exp().sum();
  }
  double acc = 0.0;
  for (double r : rows) acc += r;
  return acc / (static_cast<double>(a.rows()) * b.rows());
}

}  // namespace parallel

}  // namespace cfglab::kernels
