/*
 * Copyright 2026 The ClonalNet Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "clonalnet/error.hpp"

namespace clonalnet {

template <std::floating_point T = double>
class Vector {
 public:
  using value_type = T;

  Vector() = default;
  explicit Vector(std::size_t n, T fill = T(0)) : data_(n, fill) {}
  Vector(std::initializer_list<T> values) : data_(values) {}
  explicit Vector(std::vector<T> values) : data_(std::move(values)) {}
  explicit Vector(std::span<const T> values) : data_(values.begin(), values.end()) {}

  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  auto begin() noexcept { return data_.begin(); }
  auto end() noexcept { return data_.end(); }
  auto begin() const noexcept { return data_.begin(); }
  auto end() const noexcept { return data_.end(); }

  std::span<const T> span() const noexcept { return data_; }
  std::span<T> mutable_span() noexcept { return data_; }
  operator std::span<const T>() const noexcept { return data_; }

  const std::vector<T>& values() const noexcept { return data_; }

  bool operator==(const Vector&) const = default;

 private:
  std::vector<T> data_;
};

/// Dense row-major matrix.
template <std::floating_point T = double>
class Matrix {
 public:
  using value_type = T;

  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T(0))
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw Error(ErrorCode::dimension_mismatch,
                  "matrix data has " + std::to_string(data_.size()) + " entries, expected " +
                      std::to_string(rows_) + "x" + std::to_string(cols_));
    }
  }
  Matrix(std::initializer_list<std::initializer_list<T>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) {
        throw Error(ErrorCode::dimension_mismatch, "ragged matrix initializer");
      }
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> span() noexcept { return data_; }
  std::span<const T> span() const noexcept { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

inline std::string shape_string(std::size_t rows, std::size_t cols) {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

/// xoshiro256** seeded through splitmix64. The sequence for a given seed is
/// part of the on-disk reproducibility contract; do not change it.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) {
    std::uint64_t x = seed;
    for (auto& s : state_) s = splitmix64(x);
  }

  std::uint64_t next_u64() noexcept {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform01() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform01(); }

  /// Unbiased integer in [0, n) by rejection.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw Error(ErrorCode::invalid_argument, "Rng::below(0)");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t r;
    do {
      r = next_u64();
    } while (r >= limit);
    return r % n;
  }

  /// Standard normal via Box-Muller (cosine branch only, no cached pair).
  double normal() noexcept {
    double u1 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  template <typename It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
      const auto j = below(i);
      std::iter_swap(first + (i - 1), first + j);
    }
  }

 private:
  static std::uint64_t splitmix64(std::uint64_t& x) noexcept {
    std::uint64_t z = (x += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }
  static std::uint64_t rotl(std::uint64_t x, int k) noexcept { return (x << k) | (x >> (64 - k)); }

  std::uint64_t state_[4]{};
};

// Fixed-order dot product with four interleaved partial sums. The grouping
// is deterministic so results do not depend on the instruction set.
template <std::floating_point T>
T dot(std::span<const T> a, std::span<const T> b) noexcept {
  const std::size_t n = a.size();
  T s0 = 0, s1 = 0, s2 = 0, s3 = 0;
  std::size_t j = 0;
  for (; j + 4 <= n; j += 4) {
    s0 += a[j] * b[j];
    s1 += a[j + 1] * b[j + 1];
    s2 += a[j + 2] * b[j + 2];
    s3 += a[j + 3] * b[j + 3];
  }
  for (; j < n; ++j) s0 += a[j] * b[j];
  return (s0 + s1) + (s2 + s3);
}

template <std::floating_point T>
bool all_finite(std::span<const T> v) noexcept {
  return std::all_of(v.begin(), v.end(), [](T x) { return std::isfinite(x); });
}

template <std::floating_point T>
Vector<T> matvec(const Matrix<T>& m, std::span<const T> v) {
  if (m.cols() != v.size()) {
    throw Error(ErrorCode::dimension_mismatch,
                "matvec: matrix " + shape_string(m.rows(), m.cols()) + " vs vector of length " +
                    std::to_string(v.size()));
  }
  Vector<T> out(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) out[i] = dot(m.row(i), v);
  return out;
}

template <std::floating_point T>
Vector<T> matvec(const Matrix<T>& m, const Vector<T>& v) {
  return matvec(m, v.span());
}

template <std::floating_point T>
Vector<T> softmax(std::span<const T> z) {
  Vector<T> out(z.size());
  if (z.empty()) return out;
  const T zmax = *std::max_element(z.begin(), z.end());
  T sum = 0;
  for (std::size_t n = 0; n < z.size(); ++n) {
    out[n] = std::exp(z[n] - zmax);
    sum += out[n];
  }
  for (auto& p : out) p /= sum;
  return out;
}

template <std::floating_point T>
Vector<T> softmax(const Vector<T>& z) {
  return softmax(z.span());
}

template <std::floating_point T>
Vector<T> log_softmax(std::span<const T> z) {
  Vector<T> out(z.size());
  if (z.empty()) return out;
  const T zmax = *std::max_element(z.begin(), z.end());
  T sum = 0;
  for (T v : z) sum += std::exp(v - zmax);
  const T log_sum = std::log(sum);
  for (std::size_t n = 0; n < z.size(); ++n) out[n] = z[n] - zmax - log_sum;
  return out;
}

template <std::floating_point T>
Vector<T> log_softmax(const Vector<T>& z) {
  return log_softmax(z.span());
}

template <std::floating_point T>
void require_distribution(std::span<const T> p, const char* who) {
  T sum = 0;
  for (T v : p) {
    if (!(v >= T(0)) || !std::isfinite(v)) {
      throw Error(ErrorCode::not_a_distribution,
                  std::string(who) + ": entry " + std::to_string(static_cast<double>(v)) +
                      " is not a probability");
    }
    sum += v;
  }
  if (p.empty() || std::abs(sum - T(1)) > T(1e-9)) {
    throw Error(ErrorCode::not_a_distribution,
                std::string(who) + ": entries sum to " + std::to_string(static_cast<double>(sum)));
  }
}

/// Shannon entropy in nats, with 0 log 0 taken as 0.
template <std::floating_point T>
T entropy(std::span<const T> p) {
  require_distribution(p, "entropy");
  T h = 0;
  for (T v : p) {
    if (v > T(0)) h -= v * std::log(v);
  }
  return h;
}

template <std::floating_point T>
T entropy(const Vector<T>& p) {
  return entropy(p.span());
}

template <std::floating_point T>
T cosine_similarity(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::dimension_mismatch, "cosine_similarity: lengths " +
                                                   std::to_string(a.size()) + " and " +
                                                   std::to_string(b.size()));
  }
  const T na = std::sqrt(dot(a, a));
  const T nb = std::sqrt(dot(b, b));
  if (!(na > T(0)) || !(nb > T(0))) {
    throw Error(ErrorCode::zero_magnitude, "cosine_similarity: zero-magnitude vector");
  }
  const T c = dot(a, b) / (na * nb);
  return std::clamp(c, T(-1), T(1));
}

template <std::floating_point T>
T cosine_similarity(const Vector<T>& a, const Vector<T>& b) {
  return cosine_similarity(a.span(), b.span());
}

template <std::floating_point T>
std::size_t argmax(std::span<const T> v) noexcept {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

}  // namespace clonalnet
