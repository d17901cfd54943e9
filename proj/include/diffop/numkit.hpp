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

#pragma once

#include <functional>

#include "diffop/errors.hpp"
#include "diffop/types.hpp"

namespace diffop::numkit {

/// Solves A x = b by full-pivot LU.
///
/// A pivot of magnitude below 1e-12 times the largest absolute entry of A
/// counts as zero and raises SingularMatrix; the test is scale invariant, so
/// a well conditioned system of tiny numbers still solves.
Vec solve_linear(const Mat& A, const Vec& b);

/// Multi right-hand-side variant of solve_linear, one factorization for all
/// columns of B.
Mat solve_linear(const Mat& A, const Mat& B);

/// Difference step: h when positive, else the default 1e-5 * (1 + |xj|).
double fd_step(double h, double xj);

/// Jacobian of f at x by central differences.
///
/// With h <= 0 the step is chosen per coordinate as 1e-5 * (1 + |x_j|).
Mat fd_jacobian(const std::function<Vec(const Vec&)>& f, const Vec& x,
                double h = 0.0);

/// Gradient of a scalar function by central differences, same step rule.
Vec fd_gradient(const std::function<double(const Vec&)>& f, const Vec& x,
                double h = 0.0);

/// Hessian of a scalar function by second-order central differences.
///
/// Symmetric by construction. Accuracy is limited to roughly sqrt(eps)/h^2,
/// good enough for oracles and for solving, not for tight gradient checks.
Mat fd_hessian(const std::function<double(const Vec&)>& f, const Vec& x,
               double h = 0.0);

/// Max-norm relative error between two arrays of the same shape,
/// max|X - Y| / max(1e-12, |X|_inf, |Y|_inf).
double rel_err(const Mat& X, const Mat& Y);

}  // namespace diffop::numkit
