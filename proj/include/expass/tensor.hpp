#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace expass {

/// Dense row-major matrix of 64-bit floats. Immutable after construction;
/// every constructor rejects NaN/Inf entries.
class Tensor {
 public:
  Tensor() = default;

  Tensor(int rows, int cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (rows_ < 0 || cols_ < 0 ||
        data_.size() != static_cast<std::size_t>(rows_) * static_cast<std::size_t>(cols_)) {
      throw std::invalid_argument("Tensor: data length " + std::to_string(data_.size()) +
                                  " does not match shape " + shape_str());
    }
    check_finite();
  }

  static Tensor zeros(int rows, int cols) { return filled(rows, cols, 0.0); }

  static Tensor full(int rows, int cols, double value) {
    if (!std::isfinite(value)) throw std::domain_error("Tensor: non-finite fill value");
    return filled(rows, cols, value);
  }

  static Tensor identity(int n) {
    Tensor t = zeros(n, n);
    for (int i = 0; i < n; ++i) t.data_[static_cast<std::size_t>(i) * n + i] = 1.0;
    return t;
  }

  static Tensor row_vector(std::vector<double> v) {
    const int n = static_cast<int>(v.size());
    return Tensor(1, n, std::move(v));
  }

  static Tensor column_vector(std::vector<double> v) {
    const int n = static_cast<int>(v.size());
    return Tensor(n, 1, std::move(v));
  }

  int rows() const noexcept { return rows_; }
  int cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double operator()(int r, int c) const {
    return data_[static_cast<std::size_t>(r) * cols_ + c];
  }

  double at(int r, int c) const {
    if (r < 0 || r >= rows_ || c < 0 || c >= cols_)
      throw std::out_of_range("Tensor::at(" + std::to_string(r) + "," + std::to_string(c) +
                              ") on " + shape_str());
    return (*this)(r, c);
  }

  const std::vector<double>& data() const noexcept { return data_; }

  bool same_shape(const Tensor& o) const noexcept {
    return rows_ == o.rows_ && cols_ == o.cols_;
  }

  std::string shape_str() const {
    return std::to_string(rows_) + "x" + std::to_string(cols_);
  }

  bool operator==(const Tensor& o) const noexcept {
    return rows_ == o.rows_ && cols_ == o.cols_ && data_ == o.data_;
  }

 private:
  friend class Tape;  // gradient accumulation writes through mutable_data()

  static Tensor filled(int rows, int cols, double value) {
    if (rows < 0 || cols < 0) throw std::invalid_argument("Tensor: negative dimension");
    Tensor t;
    t.rows_ = rows;
    t.cols_ = cols;
    t.data_.assign(static_cast<std::size_t>(rows) * cols, value);
    return t;
  }

  // A single reduction catches any NaN/Inf: non-finite entries make the sum
  // non-finite (Inf entries of opposite sign produce NaN).
  void check_finite() const {
    double s = 0.0;
    for (double v : data_) s += v;
    if (!std::isfinite(s) && !data_.empty()) {
      for (std::size_t i = 0; i < data_.size(); ++i) {
        if (!std::isfinite(data_[i]))
          throw std::domain_error("Tensor: non-finite entry at flat index " + std::to_string(i));
      }
    }
  }

  std::vector<double>& mutable_data() noexcept { return data_; }

  int rows_ = 0, cols_ = 0;
  std::vector<double> data_;
};

namespace detail {

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                                b.shape_str());
}

// C = A * B, plain ikj loop over row-major data.
inline std::vector<double> matmul_raw(const double* a, int ar, int ac, const double* b, int bc) {
  std::vector<double> c(static_cast<std::size_t>(ar) * bc, 0.0);
  for (int i = 0; i < ar; ++i) {
    const double* arow = a + static_cast<std::size_t>(i) * ac;
    double* crow = c.data() + static_cast<std::size_t>(i) * bc;
    for (int k = 0; k < ac; ++k) {
      const double aik = arow[k];
      if (aik == 0.0) continue;
      const double* brow = b + static_cast<std::size_t>(k) * bc;
      for (int j = 0; j < bc; ++j) crow[j] += aik * brow[j];
    }
  }
  return c;
}

}  // namespace detail

/// Standard matrix product; throws a dimension error naming both shapes.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows())
    throw std::invalid_argument("matmul: inner dimensions disagree, " + a.shape_str() + " x " +
                                b.shape_str());
  return Tensor(a.rows(), b.cols(),
                detail::matmul_raw(a.data().data(), a.rows(), a.cols(), b.data().data(), b.cols()));
}

/// A * B^T without materializing the transpose.
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols())
    throw std::invalid_argument("matmul_nt: inner dimensions disagree, " + a.shape_str() +
                                " x (" + b.shape_str() + ")^T");
  const int m = a.rows(), n = b.rows(), k = a.cols();
  std::vector<double> c(static_cast<std::size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i) {
    const double* arow = a.data().data() + static_cast<std::size_t>(i) * k;
    for (int j = 0; j < n; ++j) {
      const double* brow = b.data().data() + static_cast<std::size_t>(j) * k;
      double s = 0.0;
      for (int t = 0; t < k; ++t) s += arow[t] * brow[t];
      c[static_cast<std::size_t>(i) * n + j] = s;
    }
  }
  return Tensor(m, n, std::move(c));
}

/// A^T * B without materializing the transpose.
inline Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows())
    throw std::invalid_argument("matmul_tn: inner dimensions disagree, (" + a.shape_str() +
                                ")^T x " + b.shape_str());
  const int m = a.cols(), n = b.cols(), k = a.rows();
  std::vector<double> c(static_cast<std::size_t>(m) * n, 0.0);
  for (int t = 0; t < k; ++t) {
    const double* arow = a.data().data() + static_cast<std::size_t>(t) * m;
    const double* brow = b.data().data() + static_cast<std::size_t>(t) * n;
    for (int i = 0; i < m; ++i) {
      const double ai = arow[i];
      if (ai == 0.0) continue;
      double* crow = c.data() + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += ai * brow[j];
    }
  }
  return Tensor(m, n, std::move(c));
}

inline Tensor transpose(const Tensor& a) {
  std::vector<double> t(a.size());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j)
      t[static_cast<std::size_t>(j) * a.rows() + i] = a(i, j);
  return Tensor(a.cols(), a.rows(), std::move(t));
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> c(a.size());
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = a.data()[i] + b.data()[i];
  return Tensor(a.rows(), a.cols(), std::move(c));
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> c(a.size());
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = a.data()[i] - b.data()[i];
  return Tensor(a.rows(), a.cols(), std::move(c));
}

inline Tensor hadamard(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "hadamard");
  std::vector<double> c(a.size());
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = a.data()[i] * b.data()[i];
  return Tensor(a.rows(), a.cols(), std::move(c));
}

inline Tensor scale(const Tensor& a, double s) {
  std::vector<double> c(a.size());
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = a.data()[i] * s;
  return Tensor(a.rows(), a.cols(), std::move(c));
}

inline double frobenius_norm(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v * v;
  return std::sqrt(s);
}

}  // namespace expass
