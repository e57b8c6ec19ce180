#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "sleepdet/errors.hpp"

namespace sleepdet {

/// Dense row-major tensor of rank 1..3. Feature maps are channels x time,
/// convolution weights are out x in_per_group x kernel.
template <typename T>
struct Tensor {
  std::vector<int64_t> shape;
  std::vector<T> data;

  Tensor() = default;

  static Tensor zeros(std::vector<int64_t> s) {
    Tensor t;
    t.shape = std::move(s);
    t.data.assign(static_cast<size_t>(numel_of(t.shape)), T(0));
    return t;
  }

  static Tensor full(std::vector<int64_t> s, T v) {
    Tensor t = zeros(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }

  static Tensor from(std::vector<int64_t> s, std::vector<T> d) {
    if (numel_of(s) != static_cast<int64_t>(d.size()))
      throw ValidationError("tensor: data length does not match shape");
    Tensor t;
    t.shape = std::move(s);
    t.data = std::move(d);
    return t;
  }

  static int64_t numel_of(const std::vector<int64_t>& s) {
    int64_t n = 1;
    for (int64_t d : s) {
      if (d < 0) throw ValidationError("tensor: negative dimension");
      n *= d;
    }
    return n;
  }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int64_t dim(int i) const { return shape.at(static_cast<size_t>(i)); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  // Rank-2 (C x T) helpers.
  int64_t rows() const { return shape.at(0); }
  int64_t cols() const { return shape.at(1); }
  T* row(int64_t r) { return data.data() + r * cols(); }
  const T* row(int64_t r) const { return data.data() + r * cols(); }
  T& at2(int64_t r, int64_t c) { return data[static_cast<size_t>(r * cols() + c)]; }
  T at2(int64_t r, int64_t c) const { return data[static_cast<size_t>(r * cols() + c)]; }

  bool all_finite() const {
    for (const T& v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

/// Normal draws with a fixed generator; the call sequence is part of the
/// reproducibility contract, so all parameter init flows through here.
template <typename T>
Tensor<T> randn(std::vector<int64_t> s, std::mt19937_64& rng, double stddev) {
  Tensor<T> t = Tensor<T>::zeros(std::move(s));
  std::normal_distribution<double> dist(0.0, stddev);
  for (T& v : t.data) v = static_cast<T>(dist(rng));
  return t;
}

inline std::string shape_str(const std::vector<int64_t>& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

}  // namespace sleepdet
