// Copyright 2026 The SAM Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef SAM_NUMERICS_HPP_
#define SAM_NUMERICS_HPP_

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "sam/error.hpp"

namespace sam {

// Dense real vector. Feature vectors, projections and biases all use it.
using Vec = std::vector<double>;

// Row-major dense matrix.
class Mat {
 public:
  Mat() = default;
  Mat(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), values_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return values_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {values_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {values_.data() + r * cols_, cols_}; }

  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }

  bool same_shape(const Mat& other) const { return rows_ == other.rows_ && cols_ == other.cols_; }

  friend bool operator==(const Mat&, const Mat&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
};

inline constexpr double kNormEpsilon = 1e-12;

// v / (|v| + eps). Throws DegenerateVector when |v| < eps.
Vec l2_normalize(std::span<const double> v);

double l2_norm(std::span<const double> v);
double dot(std::span<const double> u, std::span<const double> v);

// Dot product of two unit vectors, clamped to [-1, 1].
double cosine_sim(std::span<const double> u, std::span<const double> v);

double euclidean_dist(std::span<const double> u, std::span<const double> v);

// out = m * x + b
void affine(const Mat& m, std::span<const double> x, std::span<const double> b,
            std::span<double> out);

// out = m^T * y
void transposed_mul(const Mat& m, std::span<const double> y, std::span<double> out);

// m += a * b^T
void add_outer(Mat& m, std::span<const double> a, std::span<const double> b);

// y += scale * x
void axpy(double scale, std::span<const double> x, std::span<double> y);

bool all_finite(std::span<const double> v);

enum class Trans { kNo, kYes };

// c = op(a) * op(b)
Mat matmul(const Mat& a, Trans ta, const Mat& b, Trans tb);
// c += op(a) * op(b)
void matmul_acc(Mat& c, const Mat& a, Trans ta, const Mat& b, Trans tb);
// Adds `bias` to every row of m.
void add_row_bias(Mat& m, std::span<const double> bias);
// acc += column sums of m.
void add_column_sums(const Mat& m, std::span<double> acc);

// Seeded xoshiro256** generator. Streams derived with split() are independent
// of each other and of the parent's draw position.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Standard normal via Box-Muller.
  double normal();
  // Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[below(i)]);
    }
  }

  // Child generator for the given stream id. Depends only on (seed, stream).
  Rng split(std::uint64_t stream) const;

 private:
  std::uint64_t seed_;
  std::uint64_t s_[4];
  double spare_normal_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace sam

#endif  // SAM_NUMERICS_HPP_
