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

#ifndef GRADERPROBE_GATED_CELL_HPP_
#define GRADERPROBE_GATED_CELL_HPP_

#include <cstddef>
#include <span>

#include "graderprobe/common.hpp"

namespace graderprobe {

// Single-gate recurrent cell. With input x_t and previous state h_{t-1}:
//
//   f_t = sigmoid(Wf x_t + Uf h_{t-1} + bf)
//   g_t = tanh(Wh x_t + Uh (f_t * h_{t-1}) + bh)
//   h_t = (1 - f_t) * h_{t-1} + f_t * g_t
//
// h_0 = 0. The cell owns no storage: its weights live at `offset` inside a
// caller-provided flat parameter vector, laid out as Wf, Uf, bf, Wh, Uh, bh
// (matrices row-major, hidden x input / hidden x hidden).
class GatedCell {
 public:
  GatedCell() = default;
  GatedCell(std::size_t input_dim, std::size_t hidden_dim, std::size_t offset);

  std::size_t input_dim() const { return input_dim_; }
  std::size_t hidden_dim() const { return hidden_dim_; }
  std::size_t offset() const { return offset_; }
  std::size_t param_count() const;

  // Uniform(-scale, scale) weights, gate bias `gate_bias`, zero candidate bias.
  void Init(std::span<double> params, Rng& rng, double scale,
            double gate_bias) const;

  struct Trace {
    Matrix inputs;     // T x I
    Matrix hidden;     // (T + 1) x H, row 0 is h_0
    Matrix gate;       // T x H
    Matrix candidate;  // T x H
  };

  Trace Forward(std::span<const double> params, const Matrix& inputs) const;

  // d_hidden holds dL/dh_t for t = 1..T as rows 0..T-1. Parameter gradients
  // are added into d_params (same layout as params); input gradients are
  // returned.
  Matrix Backward(std::span<const double> params, const Trace& trace,
                  const Matrix& d_hidden, std::span<double> d_params) const;

  // Adds lambda * U into d_params for both recurrent matrices Uf and Uh.
  void AddRecurrentDecay(std::span<const double> params, double lambda,
                         std::span<double> d_params) const;

 private:
  std::size_t input_dim_ = 0;
  std::size_t hidden_dim_ = 0;
  std::size_t offset_ = 0;
};

}  // namespace graderprobe

#endif  // GRADERPROBE_GATED_CELL_HPP_
