/*
 Copyright 2026 The diffop authors

 Licensed under the Apache License, Version 2.0 (the "License");
 you may not use this file except in compliance with the License.
 You may obtain a copy of the License at

      https://www.apache.org/licenses/LICENSE-2.0

 Unless required by applicable law or agreed to in writing, software
 distributed under the License is distributed on an "AS IS" BASIS,
 WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 See the License for the specific language governing permissions and
 limitations under the License.
*/

#include "diffop/numkit.hpp"

#include <Eigen/LU>
#include <algorithm>
#include <cmath>

namespace diffop::numkit {

namespace {

constexpr double kPivotRtol = 1e-12;

Eigen::FullPivLU<Mat> factorize_checked(const Mat& A) {
  if (A.rows() != A.cols()) {
    throw DimensionMismatch("solve_linear: A must be square, got " +
                            std::to_string(A.rows()) + "x" +
                            std::to_string(A.cols()));
  }
  const double max_abs = A.size() == 0 ? 0.0 : A.cwiseAbs().maxCoeff();
  Eigen::FullPivLU<Mat> lu(A);
  double min_pivot = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    min_pivot = std::min(min_pivot, std::abs(lu.matrixLU()(i, i)));
  }
  if (A.rows() > 0 && (max_abs == 0.0 || min_pivot < kPivotRtol * max_abs)) {
    throw SingularMatrix("solve_linear: pivot " + std::to_string(min_pivot) +
                         " below cutoff for scale " + std::to_string(max_abs));
  }
  return lu;
}

}  // namespace

double fd_step(double h, double xj) {
  return h > 0.0 ? h : 1e-5 * (1.0 + std::abs(xj));
}

Vec solve_linear(const Mat& A, const Vec& b) {
  if (A.rows() != b.size()) {
    throw DimensionMismatch("solve_linear: b has size " +
                            std::to_string(b.size()) + ", expected " +
                            std::to_string(A.rows()));
  }
  return factorize_checked(A).solve(b);
}

Mat solve_linear(const Mat& A, const Mat& B) {
  if (A.rows() != B.rows()) {
    throw DimensionMismatch("solve_linear: B has " + std::to_string(B.rows()) +
                            " rows, expected " + std::to_string(A.rows()));
  }
  return factorize_checked(A).solve(B);
}

Mat fd_jacobian(const std::function<Vec(const Vec&)>& f, const Vec& x,
                double h) {
  const Vec f0 = f(x);
  Mat J(f0.size(), x.size());
  Vec xp = x;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double hj = fd_step(h, x[j]);
    xp[j] = x[j] + hj;
    const Vec fp = f(xp);
    xp[j] = x[j] - hj;
    const Vec fm = f(xp);
    xp[j] = x[j];
    J.col(j) = (fp - fm) / (2.0 * hj);
  }
  return J;
}

Vec fd_gradient(const std::function<double(const Vec&)>& f, const Vec& x,
                double h) {
  Vec g(x.size());
  Vec xp = x;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double hj = fd_step(h, x[j]);
    xp[j] = x[j] + hj;
    const double fp = f(xp);
    xp[j] = x[j] - hj;
    const double fm = f(xp);
    xp[j] = x[j];
    g[j] = (fp - fm) / (2.0 * hj);
  }
  return g;
}

Mat fd_hessian(const std::function<double(const Vec&)>& f, const Vec& x,
               double h) {
  const Eigen::Index n = x.size();
  Mat H(n, n);
  Vec xp = x;
  const double f0 = f(x);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double hi = fd_step(h, x[i]);
    for (Eigen::Index j = i; j < n; ++j) {
      const double hj = fd_step(h, x[j]);
      if (i == j) {
        xp[i] = x[i] + hi;
        const double fp = f(xp);
        xp[i] = x[i] - hi;
        const double fm = f(xp);
        xp[i] = x[i];
        H(i, i) = (fp - 2.0 * f0 + fm) / (hi * hi);
      } else {
        xp[i] = x[i] + hi;
        xp[j] = x[j] + hj;
        const double fpp = f(xp);
        xp[j] = x[j] - hj;
        const double fpm = f(xp);
        xp[i] = x[i] - hi;
        const double fmm = f(xp);
        xp[j] = x[j] + hj;
        const double fmp = f(xp);
        xp[i] = x[i];
        xp[j] = x[j];
        H(i, j) = H(j, i) = (fpp - fpm - fmp + fmm) / (4.0 * hi * hj);
      }
    }
  }
  return H;
}

double rel_err(const Mat& X, const Mat& Y) {
  if (X.rows() != Y.rows() || X.cols() != Y.cols()) {
    throw DimensionMismatch("rel_err: shape mismatch");
  }
  if (X.size() == 0) return 0.0;
  const double scale =
      std::max({1e-12, X.cwiseAbs().maxCoeff(), Y.cwiseAbs().maxCoeff()});
  return (X - Y).cwiseAbs().maxCoeff() / scale;
}

}  // namespace diffop::numkit
