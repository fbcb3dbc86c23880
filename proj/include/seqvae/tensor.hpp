#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "seqvae/common.hpp"

namespace seqvae {

// Dense row-major tensor of 64-bit floats. Rank 0 is not used; scalars are
// shape {1}, vectors {n}, matrices {rows, cols}.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<size_t> shape)
      : shape_(std::move(shape)), data_(count(shape_), 0.0) {}

  Tensor(std::vector<size_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (count(shape_) != data_.size()) {
      throw NumericError("tensor: shape does not match data length");
    }
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  static Tensor vector(std::vector<double> v) {
    size_t n = v.size();
    return Tensor({n}, std::move(v));
  }

  static Tensor zeros(std::vector<size_t> shape) { return Tensor(std::move(shape)); }

  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_); }

  static Tensor full(std::vector<size_t> shape, double v) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = v;
    return t;
  }

  const std::vector<size_t>& shape() const { return shape_; }
  size_t rank() const { return shape_.size(); }
  size_t numel() const { return data_.size(); }

  size_t rows() const { return shape_.size() == 2 ? shape_[0] : 1; }
  size_t cols() const { return shape_.size() == 2 ? shape_[1] : shape_.empty() ? 0 : shape_[0]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](size_t i) { return data_[i]; }
  double operator[](size_t i) const { return data_[i]; }

  double& at(size_t r, size_t c) { return data_[r * shape_[1] + c]; }
  double at(size_t r, size_t c) const { return data_[r * shape_[1] + c]; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (double v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  double item() const {
    if (numel() != 1) throw NumericError("tensor: item() on non-scalar");
    return data_[0];
  }

  std::string shape_str() const {
    std::string s = "[";
    for (size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += "x";
      s += std::to_string(shape_[i]);
    }
    return s + "]";
  }

 private:
  static size_t count(const std::vector<size_t>& s) {
    return std::accumulate(s.begin(), s.end(), size_t{1}, std::multiplies<>());
  }

  std::vector<size_t> shape_;
  std::vector<double> data_;
};

namespace detail {

// out = A * B, A:[m x k], B:[k x n]
inline Tensor t_matmul(const Tensor& a, const Tensor& b) {
  size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out({m, n});
  for (size_t i = 0; i < m; ++i) {
    const double* arow = a.data() + i * k;
    double* orow = out.data() + i * n;
    for (size_t kk = 0; kk < k; ++kk) {
      double av = arow[kk];
      if (av == 0.0) continue;
      const double* brow = b.data() + kk * n;
      for (size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

// out = A * B^T, A:[m x k], B:[n x k]
inline Tensor t_matmul_nt(const Tensor& a, const Tensor& b) {
  size_t m = a.rows(), k = a.cols(), n = b.rows();
  Tensor out({m, n});
  for (size_t i = 0; i < m; ++i) {
    const double* arow = a.data() + i * k;
    for (size_t j = 0; j < n; ++j) {
      const double* brow = b.data() + j * k;
      double acc = 0.0;
      for (size_t kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
      out.at(i, j) = acc;
    }
  }
  return out;
}

// out = A^T * B, A:[k x m], B:[k x n]
inline Tensor t_matmul_tn(const Tensor& a, const Tensor& b) {
  size_t k = a.rows(), m = a.cols(), n = b.cols();
  Tensor out({m, n});
  for (size_t kk = 0; kk < k; ++kk) {
    const double* arow = a.data() + kk * m;
    const double* brow = b.data() + kk * n;
    for (size_t i = 0; i < m; ++i) {
      double av = arow[i];
      if (av == 0.0) continue;
      double* orow = out.data() + i * n;
      for (size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

}  // namespace detail

}  // namespace seqvae
