/*
 * Copyright 2026 The GraderProbe Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "graderprobe/gated_cell.hpp"

#include <cmath>
#include <vector>

namespace graderprobe {
namespace {

template <typename T>
auto Slice(T* base, std::size_t in, std::size_t hid) {
  struct {
    T* wf;
    T* uf;
    T* bf;
    T* wh;
    T* uh;
    T* bh;
  } v;
  v.wf = base;
  v.uf = v.wf + hid * in;
  v.bf = v.uf + hid * hid;
  v.wh = v.bf + hid;
  v.uh = v.wh + hid * in;
  v.bh = v.uh + hid * hid;
  return v;
}

}  // namespace

GatedCell::GatedCell(std::size_t input_dim, std::size_t hidden_dim,
                     std::size_t offset)
    : input_dim_(input_dim), hidden_dim_(hidden_dim), offset_(offset) {}

std::size_t GatedCell::param_count() const {
  return 2 * (hidden_dim_ * input_dim_ + hidden_dim_ * hidden_dim_ + hidden_dim_);
}

void GatedCell::Init(std::span<double> params, Rng& rng, double scale,
                     double gate_bias) const {
  std::uniform_real_distribution<double> u(-scale, scale);
  auto v = Slice(params.data() + offset_, input_dim_, hidden_dim_);
  const std::size_t H = hidden_dim_, I = input_dim_;
  for (std::size_t i = 0; i < H * I; ++i) v.wf[i] = u(rng);
  for (std::size_t i = 0; i < H * H; ++i) v.uf[i] = u(rng);
  for (std::size_t i = 0; i < H; ++i) v.bf[i] = gate_bias;
  for (std::size_t i = 0; i < H * I; ++i) v.wh[i] = u(rng);
  for (std::size_t i = 0; i < H * H; ++i) v.uh[i] = u(rng);
  for (std::size_t i = 0; i < H; ++i) v.bh[i] = 0.0;
}

GatedCell::Trace GatedCell::Forward(std::span<const double> params,
                                    const Matrix& inputs) const {
  const std::size_t T = inputs.rows, H = hidden_dim_, I = input_dim_;
  const auto v = Slice(params.data() + offset_, I, H);
  Trace tr;
  tr.inputs = inputs;
  tr.hidden = Matrix(T + 1, H);
  tr.gate = Matrix(T, H);
  tr.candidate = Matrix(T, H);
  std::vector<double> gated(H);
  for (std::size_t t = 0; t < T; ++t) {
    const double* x = inputs.data.data() + t * I;
    const double* hp = tr.hidden.data.data() + t * H;
    double* f = tr.gate.data.data() + t * H;
    double* g = tr.candidate.data.data() + t * H;
    double* h = tr.hidden.data.data() + (t + 1) * H;
    for (std::size_t r = 0; r < H; ++r) {
      double z = v.bf[r];
      for (std::size_t c = 0; c < I; ++c) z += v.wf[r * I + c] * x[c];
      for (std::size_t c = 0; c < H; ++c) z += v.uf[r * H + c] * hp[c];
      f[r] = Sigmoid(z);
      gated[r] = f[r] * hp[r];
    }
    for (std::size_t r = 0; r < H; ++r) {
      double z = v.bh[r];
      for (std::size_t c = 0; c < I; ++c) z += v.wh[r * I + c] * x[c];
      for (std::size_t c = 0; c < H; ++c) z += v.uh[r * H + c] * gated[c];
      g[r] = std::tanh(z);
      h[r] = (1.0 - f[r]) * hp[r] + f[r] * g[r];
    }
  }
  return tr;
}

Matrix GatedCell::Backward(std::span<const double> params, const Trace& tr,
                           const Matrix& d_hidden,
                           std::span<double> d_params) const {
  const std::size_t T = tr.inputs.rows, H = hidden_dim_, I = input_dim_;
  const auto v = Slice(params.data() + offset_, I, H);
  auto d = Slice(d_params.data() + offset_, I, H);
  Matrix d_inputs(T, I);
  std::vector<double> dh(H, 0.0), dh_prev(H), dzh(H), dzf(H), dgated(H), df(H);
  for (std::size_t tt = T; tt-- > 0;) {
    const double* x = tr.inputs.data.data() + tt * I;
    const double* hp = tr.hidden.data.data() + tt * H;
    const double* f = tr.gate.data.data() + tt * H;
    const double* g = tr.candidate.data.data() + tt * H;
    double* dx = d_inputs.data.data() + tt * I;
    for (std::size_t r = 0; r < H; ++r) dh[r] += d_hidden(tt, r);

    for (std::size_t r = 0; r < H; ++r) {
      dzh[r] = dh[r] * f[r] * (1.0 - g[r] * g[r]);
      df[r] = dh[r] * (g[r] - hp[r]);
      dh_prev[r] = dh[r] * (1.0 - f[r]);
    }
    std::fill(dgated.begin(), dgated.end(), 0.0);
    for (std::size_t r = 0; r < H; ++r) {
      const double z = dzh[r];
      if (z == 0.0) continue;
      d.bh[r] += z;
      for (std::size_t c = 0; c < I; ++c) {
        d.wh[r * I + c] += z * x[c];
        dx[c] += v.wh[r * I + c] * z;
      }
      for (std::size_t c = 0; c < H; ++c) {
        d.uh[r * H + c] += z * f[c] * hp[c];
        dgated[c] += v.uh[r * H + c] * z;
      }
    }
    for (std::size_t r = 0; r < H; ++r) {
      df[r] += dgated[r] * hp[r];
      dh_prev[r] += dgated[r] * f[r];
      dzf[r] = df[r] * f[r] * (1.0 - f[r]);
    }
    for (std::size_t r = 0; r < H; ++r) {
      const double z = dzf[r];
      if (z == 0.0) continue;
      d.bf[r] += z;
      for (std::size_t c = 0; c < I; ++c) {
        d.wf[r * I + c] += z * x[c];
        dx[c] += v.wf[r * I + c] * z;
      }
      for (std::size_t c = 0; c < H; ++c) {
        d.uf[r * H + c] += z * hp[c];
        dh_prev[c] += v.uf[r * H + c] * z;
      }
    }
    dh.swap(dh_prev);
  }
  return d_inputs;
}

void GatedCell::AddRecurrentDecay(std::span<const double> params, double lambda,
                                  std::span<double> d_params) const {
  const auto v = Slice(params.data() + offset_, input_dim_, hidden_dim_);
  auto d = Slice(d_params.data() + offset_, input_dim_, hidden_dim_);
  for (std::size_t i = 0; i < hidden_dim_ * hidden_dim_; ++i) {
    d.uf[i] += lambda * v.uf[i];
    d.uh[i] += lambda * v.uh[i];
  }
}

}  // namespace graderprobe
