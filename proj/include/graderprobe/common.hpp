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

#ifndef GRADERPROBE_COMMON_HPP_
#define GRADERPROBE_COMMON_HPP_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace graderprobe {

// Index into a Vocabulary. PAD is always 0 and UNK is always 1.
using TokenId = std::int32_t;
inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kUnkId = 1;
inline constexpr TokenId kNumSpecialTokens = 2;

using Rng = std::mt19937_64;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input file; carries the 1-based line number when known.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(what + " (line " + std::to_string(line) + ")"), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Input that parses but violates a documented range or precondition.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Optimization blew up (non-finite loss).
class TrainingError : public Error {
 public:
  using Error::Error;
};

// Row-major dense matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const {
    return data[r * cols + c];
  }
  std::span<double> row(std::size_t r) {
    return {data.data() + r * cols, cols};
  }
  std::span<const double> row(std::size_t r) const {
    return {data.data() + r * cols, cols};
  }
};

double Dot(std::span<const double> a, std::span<const double> b);
double Norm2(std::span<const double> a);
double Sigmoid(double x);

// Quantile with linear interpolation between order statistics (q in [0,1]).
double Quantile(std::vector<double> values, double q);

double Mean(std::span<const double> values);
// Population standard deviation.
double StdDev(std::span<const double> values);

// splitmix64 step; derives independent child seeds from a master seed.
std::uint64_t DeriveSeed(std::uint64_t master, std::uint64_t stream);

// 64-bit FNV-1a of `bytes` as 16 lowercase hex digits.
std::string Fnv1aHex(std::string_view bytes);

// Runs fn(i) for i in [0, n) over `workers` threads. Each index is visited
// exactly once; callers write results into per-index slots so the outcome
// does not depend on the worker count.
void ParallelFor(std::size_t n, int workers,
                 const std::function<void(std::size_t)>& fn);

// Resolves a worker-count flag: values < 1 mean "available parallelism".
int ResolveWorkers(int requested);

}  // namespace graderprobe

#endif  // GRADERPROBE_COMMON_HPP_
