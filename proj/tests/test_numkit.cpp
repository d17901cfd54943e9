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

#include <doctest.h>

#include <cmath>

#include "diffop/errors.hpp"
#include "diffop/numkit.hpp"
#include "diffop/types.hpp"

using diffop::Mat;
using diffop::Vec;
namespace nk = diffop::numkit;

TEST_CASE("solve_linear recovers the solution of full-rank systems") {
  Mat I3 = Mat::Identity(3, 3);
  Vec b3(3);
  b3 << 1.0, 2.0, 3.0;
  const Vec x3 = nk::solve_linear(I3, b3);
  CHECK(x3.size() == 3);
  CHECK((x3 - b3).lpNorm<Eigen::Infinity>() == 0.0);

  Mat D(2, 2);
  D << 2.0, 0.0, 0.0, 4.0;
  Vec b2(2);
  b2 << 2.0, 8.0;
  const Vec x2 = nk::solve_linear(D, b2);
  CHECK(std::abs(x2[0] - 1.0) <= 1e-14);
  CHECK(std::abs(x2[1] - 2.0) <= 1e-14);
}

TEST_CASE("solve_linear handles multiple right-hand sides at once") {
  Mat A(3, 3);
  A << 4.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 2.0;
  Mat X_true(3, 2);
  X_true << 1.0, -2.0, 0.5, 3.0, -1.0, 0.25;
  const Mat B = A * X_true;
  const Mat X = nk::solve_linear(A, B);
  CHECK((X - X_true).lpNorm<Eigen::Infinity>() <= 1e-12);
}

TEST_CASE("solve_linear rejects rank-deficient systems independent of scale") {
  Mat S(2, 2);
  S << 1.0, 1.0, 1.0, 1.0;
  Vec b(2);
  b << 1.0, 2.0;
  CHECK_THROWS_AS((void)nk::solve_linear(S, b), diffop::SingularMatrix);

  // The pivot threshold is relative; a uniformly tiny singular matrix must
  // still be rejected while a uniformly tiny well-conditioned one solves.
  CHECK_THROWS_AS((void)nk::solve_linear(Mat(1e-8 * S), b),
                  diffop::SingularMatrix);
  const Mat tiny = 1e-8 * Mat::Identity(2, 2);
  const Vec xt = nk::solve_linear(tiny, b);
  CHECK(std::abs(xt[0] - 1e8) <= 1.0);
  CHECK(std::abs(xt[1] - 2e8) <= 1.0);
}

TEST_CASE("fd_jacobian reproduces the identity map exactly enough") {
  auto f = [](const Vec& x) { return x; };
  Vec x(3);
  x << 0.3, -1.2, 2.0;
  const Mat J = nk::fd_jacobian(f, x);
  CHECK((J - Mat::Identity(3, 3)).lpNorm<Eigen::Infinity>() <= 1e-10);
}

TEST_CASE("fd_jacobian matches the derivative of a scalar square") {
  auto f = [](const Vec& x) {
    Vec y(1);
    y[0] = x[0] * x[0];
    return y;
  };
  Vec x(1);
  x << 3.0;
  const Mat J = nk::fd_jacobian(f, x);
  CHECK(J.rows() == 1);
  CHECK(J.cols() == 1);
  CHECK(std::abs(J(0, 0) - 6.0) <= 1e-6);
}

TEST_CASE("fd_jacobian is exact for affine maps up to roundoff") {
  Mat A(3, 4);
  A << 0.5, -1.0, 2.0, 0.1, 1.5, 0.3, -0.7, 2.2, -0.4, 1.1, 0.9, -1.3;
  Vec c(3);
  c << 1.0, -2.0, 0.5;
  auto f = [&](const Vec& x) { return Vec(A * x + c); };
  Vec x(4);
  x << 0.2, -0.8, 1.4, -0.1;
  const Mat J = nk::fd_jacobian(f, x);
  CHECK((J - A).lpNorm<Eigen::Infinity>() <= 1e-9);
}

TEST_CASE("fd_step defaults to a relative increment") {
  CHECK(nk::fd_step(0.0, 0.0) == 1e-5);
  CHECK(std::abs(nk::fd_step(0.0, 3.0) - 1e-5 * 4.0) <= 1e-20);
  CHECK(std::abs(nk::fd_step(0.0, -3.0) - 1e-5 * 4.0) <= 1e-20);
  CHECK(nk::fd_step(1e-3, 42.0) == 1e-3);
}

TEST_CASE("fd_gradient and fd_hessian recover a quadratic's closed forms") {
  Mat P(3, 3);
  P << 3.0, 0.5, 0.0, 0.5, 2.0, -0.3, 0.0, -0.3, 1.5;
  Vec q(3);
  q << 1.0, -1.0, 0.5;
  auto f = [&](const Vec& x) { return 0.5 * x.dot(P * x) + q.dot(x); };
  Vec x(3);
  x << 0.7, -0.2, 1.1;

  const Vec g = nk::fd_gradient(f, x);
  CHECK((g - Vec(P * x + q)).lpNorm<Eigen::Infinity>() <= 1e-8);

  const Mat H = nk::fd_hessian(f, x);
  CHECK((H - P).lpNorm<Eigen::Infinity>() <= 1e-4);
  CHECK((H - H.transpose()).lpNorm<Eigen::Infinity>() <= 1e-8);
}

TEST_CASE("rel_err scales the worst entry difference by the larger magnitude") {
  Mat X(1, 1), Y(1, 1);
  X << 1.0;
  Y << 2.0;
  CHECK(std::abs(nk::rel_err(X, Y) - 0.5) <= 1e-15);
  CHECK(nk::rel_err(X, X) == 0.0);
  CHECK(nk::rel_err(Mat::Zero(2, 2), Mat::Zero(2, 2)) == 0.0);
}
