// Independent reference computations shared by the unit and acceptance tests.
// Everything here uses plain loops so it does not lean on the code under test.
#pragma once

#include "cogfactor/model.hpp"

#include <cmath>
#include <algorithm>
#include <functional>
#include <limits>

namespace oracle {

using cogfactor::Matrix;
using cogfactor::Vector;

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  Matrix c = Matrix::Zero(a.rows(), b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (Eigen::Index k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  return c;
}

inline Vector softmax(const Vector& s) {
  double mx = s[0];
  for (Eigen::Index i = 1; i < s.size(); ++i) mx = std::max(mx, s[i]);
  Vector e(s.size());
  double total = 0.0;
  for (Eigen::Index i = 0; i < s.size(); ++i) total += (e[i] = std::exp(s[i] - mx));
  for (Eigen::Index i = 0; i < s.size(); ++i) e[i] /= total;
  return e;
}

/// softmax(W_d^T (keep * scale * (W_e^T z)) + b) row by row.
inline Matrix factored_probs(const Matrix& z, const Matrix& we, const Matrix& wd, const Vector& b,
                             const Vector* keep = nullptr, double scale = 1.0) {
  Matrix h = matmul(z, we);
  if (keep != nullptr)
    for (Eigen::Index i = 0; i < h.rows(); ++i)
      for (Eigen::Index j = 0; j < h.cols(); ++j) h(i, j) *= (*keep)[j] * scale;
  Matrix s = matmul(h, wd);
  Matrix p(s.rows(), s.cols());
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    Vector row = s.row(i).transpose();
    for (Eigen::Index j = 0; j < row.size(); ++j) row[j] += b[j];
    p.row(i) = softmax(row).transpose();
  }
  return p;
}

inline double mean_nll(const Matrix& p, const cogfactor::Labels& y) {
  double t = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) t -= std::log(p(static_cast<Eigen::Index>(i), y[i]));
  return t / static_cast<double>(y.size());
}

/// Central finite differences of f with respect to every entry of `param`.
inline Matrix numeric_grad(Matrix& param, const std::function<double()>& f, double h = 1e-6) {
  Matrix g(param.rows(), param.cols());
  for (Eigen::Index i = 0; i < param.rows(); ++i)
    for (Eigen::Index j = 0; j < param.cols(); ++j) {
      const double keep = param(i, j);
      param(i, j) = keep + h;
      const double up = f();
      param(i, j) = keep - h;
      const double down = f();
      param(i, j) = keep;
      g(i, j) = (up - down) / (2.0 * h);
    }
  return g;
}

inline Vector numeric_grad(Vector& param, const std::function<double()>& f, double h = 1e-6) {
  Matrix m = param;
  Matrix g = numeric_grad(m, [&] {
    param = m;
    return f();
  }, h);
  param = m;
  return g.col(0);
}

/// max|a - b| / max(max|a|, max|b|, floor); the floor keeps all-zero blocks from dividing by zero.
inline double rel_error(const Matrix& a, const Matrix& b, double floor = 1e-8) {
  const double scale = std::max({a.cwiseAbs().maxCoeff(), b.cwiseAbs().maxCoeff(), floor});
  return (a - b).cwiseAbs().maxCoeff() / scale;
}

/// Minimum within-cluster sum of squares over every 2-partition of the rows.
inline double best_two_partition(const Matrix& z) {
  const auto n = static_cast<int>(z.rows());
  double best = std::numeric_limits<double>::infinity();
  for (unsigned mask = 1; mask + 1 < (1u << n); ++mask) {
    double total = 0.0;
    for (int side = 0; side < 2; ++side) {
      Vector c = Vector::Zero(z.cols());
      int cnt = 0;
      for (int i = 0; i < n; ++i)
        if (((mask >> i) & 1u) == static_cast<unsigned>(side)) {
          c += z.row(i).transpose();
          ++cnt;
        }
      c /= cnt;
      for (int i = 0; i < n; ++i)
        if (((mask >> i) & 1u) == static_cast<unsigned>(side)) total += (z.row(i).transpose() - c).squaredNorm();
    }
    best = std::min(best, total);
  }
  return best;
}

}  // namespace oracle
