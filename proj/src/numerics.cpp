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

#include "sam/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include <Eigen/Core>

namespace sam {

namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

void check_same_dim(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw DimensionMismatch(std::string(what) + ": " + std::to_string(a) + " vs " +
                            std::to_string(b));
  }
}

}  // namespace

double dot(std::span<const double> u, std::span<const double> v) {
  check_same_dim(u.size(), v.size(), "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) s += u[i] * v[i];
  return s;
}

double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

Vec l2_normalize(std::span<const double> v) {
  if (v.empty()) throw DimensionMismatch("l2_normalize: empty vector");
  const double n = l2_norm(v);
  if (!(n >= kNormEpsilon)) {
    throw DegenerateVector("l2_normalize: norm " + std::to_string(n) + " below 1e-12");
  }
  const double inv = 1.0 / (n + kNormEpsilon);
  Vec out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] * inv;
  return out;
}

double cosine_sim(std::span<const double> u, std::span<const double> v) {
  return std::clamp(dot(u, v), -1.0, 1.0);
}

double euclidean_dist(std::span<const double> u, std::span<const double> v) {
  check_same_dim(u.size(), v.size(), "euclidean_dist");
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double d = u[i] - v[i];
    s += d * d;
  }
  return std::sqrt(s);
}

void affine(const Mat& m, std::span<const double> x, std::span<const double> b,
            std::span<double> out) {
  check_same_dim(m.cols(), x.size(), "affine input");
  check_same_dim(m.rows(), b.size(), "affine bias");
  check_same_dim(m.rows(), out.size(), "affine output");
  const std::size_t cols = m.cols();
  const double* w = m.values().data();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const double* wr = w + r * cols;
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += wr[c] * x[c];
    out[r] = s + b[r];
  }
}

void transposed_mul(const Mat& m, std::span<const double> y, std::span<double> out) {
  check_same_dim(m.rows(), y.size(), "transposed_mul input");
  check_same_dim(m.cols(), out.size(), "transposed_mul output");
  std::fill(out.begin(), out.end(), 0.0);
  const std::size_t cols = m.cols();
  const double* w = m.values().data();
  double* o = out.data();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const double yr = y[r];
    if (yr == 0.0) continue;
    const double* wr = w + r * cols;
    for (std::size_t c = 0; c < cols; ++c) o[c] += yr * wr[c];
  }
}

void add_outer(Mat& m, std::span<const double> a, std::span<const double> b) {
  check_same_dim(m.rows(), a.size(), "add_outer rows");
  check_same_dim(m.cols(), b.size(), "add_outer cols");
  const std::size_t cols = m.cols();
  double* w = m.values().data();
  const double* bp = b.data();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const double ar = a[r];
    if (ar == 0.0) continue;
    double* wr = w + r * cols;
    for (std::size_t c = 0; c < cols; ++c) wr[c] += ar * bp[c];
  }
}

void axpy(double scale, std::span<const double> x, std::span<double> y) {
  check_same_dim(x.size(), y.size(), "axpy");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += scale * x[i];
}

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<RowMajor> as_eigen(Mat& m) {
  return {m.values().data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols())};
}

Eigen::Map<const RowMajor> as_eigen(const Mat& m) {
  return {m.values().data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols())};
}

std::pair<std::size_t, std::size_t> op_shape(const Mat& m, Trans t) {
  return t == Trans::kNo ? std::pair{m.rows(), m.cols()} : std::pair{m.cols(), m.rows()};
}

}  // namespace

void matmul_acc(Mat& c, const Mat& a, Trans ta, const Mat& b, Trans tb) {
  const auto [ar, ac] = op_shape(a, ta);
  const auto [br, bc] = op_shape(b, tb);
  check_same_dim(ac, br, "matmul inner");
  check_same_dim(c.rows(), ar, "matmul rows");
  check_same_dim(c.cols(), bc, "matmul cols");
  auto out = as_eigen(c);
  const auto ea = as_eigen(a);
  const auto eb = as_eigen(b);
  if (ta == Trans::kNo && tb == Trans::kNo) {
    out.noalias() += ea * eb;
  } else if (ta == Trans::kNo) {
    out.noalias() += ea * eb.transpose();
  } else if (tb == Trans::kNo) {
    out.noalias() += ea.transpose() * eb;
  } else {
    out.noalias() += ea.transpose() * eb.transpose();
  }
}

Mat matmul(const Mat& a, Trans ta, const Mat& b, Trans tb) {
  Mat c(op_shape(a, ta).first, op_shape(b, tb).second);
  matmul_acc(c, a, ta, b, tb);
  return c;
}

void add_row_bias(Mat& m, std::span<const double> bias) {
  check_same_dim(m.cols(), bias.size(), "add_row_bias");
  for (std::size_t r = 0; r < m.rows(); ++r) axpy(1.0, bias, m.row(r));
}

void add_column_sums(const Mat& m, std::span<double> acc) {
  check_same_dim(m.cols(), acc.size(), "add_column_sums");
  for (std::size_t r = 0; r < m.rows(); ++r) axpy(1.0, m.row(r), acc);
}

Rng::Rng(std::uint64_t seed) : seed_(seed) {
  std::uint64_t state = seed;
  for (auto& word : s_) word = splitmix64(state);
}

std::uint64_t Rng::next_u64() {
  const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_normal_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_normal_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw InvalidConfig("Rng::below: n must be positive");
  // Rejection sampling on the top of the range keeps the draw unbiased.
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t x = next_u64();
  while (x >= limit) x = next_u64();
  return x % n;
}

Rng Rng::split(std::uint64_t stream) const {
  std::uint64_t state = seed_ ^ 0xD1B54A32D192ED03ULL;
  std::uint64_t mixed = splitmix64(state);
  state = mixed ^ (stream * 0x9E3779B97F4A7C15ULL + 0x632BE59BD9B4E019ULL);
  return Rng(splitmix64(state) ^ stream);
}

}  // namespace sam
