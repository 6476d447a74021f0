#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "expass/tensor.hpp"

namespace expass {

struct EigenDecomposition {
  std::vector<double> values;  // ascending
  Tensor vectors;              // column k is the eigenvector of values[k]
};

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Rotations are
/// applied sweep by sweep until the off-diagonal Frobenius norm drops below
/// 1e-12 * ||M||_F. Input must be symmetric within 1e-9.
inline EigenDecomposition symmetric_eigen(const Tensor& m) {
  const int n = m.rows();
  if (n != m.cols()) throw std::invalid_argument("symmetric_eigen: matrix not square, " + m.shape_str());
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (std::fabs(m(i, j) - m(j, i)) > 1e-9)
        throw std::invalid_argument("symmetric_eigen: input not symmetric at (" +
                                    std::to_string(i) + "," + std::to_string(j) + ")");

  std::vector<double> a = m.data();
  std::vector<double> v(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i) * n + i] = 1.0;

  const auto at = [&](int i, int j) -> double& { return a[static_cast<std::size_t>(i) * n + j]; };
  const auto off_norm = [&] {
    double s = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (i != j) s += at(i, j) * at(i, j);
    return std::sqrt(s);
  };

  const double target = 1e-12 * frobenius_norm(m);
  for (int sweep = 0; sweep < 100 && off_norm() > target; ++sweep) {
    for (int p = 0; p < n - 1; ++p) {
      for (int q = p + 1; q < n; ++q) {
        const double apq = at(p, q);
        if (apq == 0.0) continue;
        const double theta = (at(q, q) - at(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < n; ++k) {
          const double akp = at(k, p), akq = at(k, q);
          at(k, p) = c * akp - s * akq;
          at(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = at(p, k), aqk = at(q, k);
          at(p, k) = c * apk - s * aqk;
          at(q, k) = s * apk + c * aqk;
        }
        for (int k = 0; k < n; ++k) {
          const double vkp = v[static_cast<std::size_t>(k) * n + p];
          const double vkq = v[static_cast<std::size_t>(k) * n + q];
          v[static_cast<std::size_t>(k) * n + p] = c * vkp - s * vkq;
          v[static_cast<std::size_t>(k) * n + q] = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int i, int j) { return at(i, i) < at(j, j); });

  EigenDecomposition out;
  out.values.resize(n);
  std::vector<double> sorted_v(static_cast<std::size_t>(n) * n);
  for (int k = 0; k < n; ++k) {
    out.values[k] = at(order[k], order[k]);
    for (int i = 0; i < n; ++i)
      sorted_v[static_cast<std::size_t>(i) * n + k] = v[static_cast<std::size_t>(i) * n + order[k]];
  }
  out.vectors = Tensor(n, n, std::move(sorted_v));
  return out;
}

/// W^T W assembled symmetrically, for singular-value work.
inline Tensor gram(const Tensor& w) {
  const int n = w.cols();
  std::vector<double> g(static_cast<std::size_t>(n) * n);
  for (int i = 0; i < n; ++i) {
    for (int j = i; j < n; ++j) {
      double s = 0.0;
      for (int k = 0; k < w.rows(); ++k) s += w(k, i) * w(k, j);
      g[static_cast<std::size_t>(i) * n + j] = s;
      g[static_cast<std::size_t>(j) * n + i] = s;
    }
  }
  return Tensor(n, n, std::move(g));
}

/// Spectral norm (largest singular value) via the Gram matrix.
inline double spectral_norm(const Tensor& w) {
  if (w.size() == 0) return 0.0;
  const auto eig = symmetric_eigen(gram(w));
  return std::sqrt(std::max(0.0, eig.values.back()));
}

}  // namespace expass
