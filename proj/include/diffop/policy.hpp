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

// Stochastic policy layer: per-coordinate truncated-Gaussian sampling around
// a planned action, the exact log-density, and the score used by the policy
// gradient estimator. Sampling is counter-based so parallel rollouts with
// disjoint keys are order-independent and bit-reproducible.

#include <cstdint>

#include "diffop/types.hpp"

namespace diffop::policy {

/// How the truncation half-width is derived from sigma and beta. The
/// default takes the box u* +- beta*sigma^2 literally; the alternative
/// reads it as u* +- beta*sigma.
enum class TruncationRule { kBetaSigmaSq, kBetaSigma };

struct StochasticCfg {
  double sigma = 0.1;
  double beta = 3.0;
  std::uint64_t seed = 0;
  TruncationRule rule = TruncationRule::kBetaSigmaSq;

  double half_width() const;        // box half-width per coordinate
  double kappa() const;             // half_width / sigma, in sigma units
  void validate() const;            // requires sigma > 0 and beta > 0
};

/// Counter-based generator: a 64-bit mixing chain keyed by (seed, iteration,
/// trajectory, step). Streams with distinct keys are independent, and a
/// stream's draws depend only on its key and draw index.
struct CounterRng {
  std::uint64_t state = 0;

  static CounterRng keyed(std::uint64_t seed, std::uint64_t iteration,
                          std::uint64_t trajectory, std::uint64_t step);
  std::uint64_t next_u64();
  double next_uniform01();  // strictly inside (0, 1)
};

double normal_pdf(double x);
double normal_cdf(double x);
/// Inverse standard-normal CDF, polished to double precision.
/// Throws DomainError unless 0 < p < 1.
double normal_icdf(double p);

/// Draws each coordinate from Gaussian(u_star_j, sigma^2) truncated to the
/// closed box |u_j - u_star_j| <= half_width, by inverse-CDF transform of
/// one uniform draw per coordinate.
Vec sample_action(const Vec& u_star, const StochasticCfg& cfg,
                  CounterRng& rng);

/// Exact log-density of the truncated Gaussian at u. The normalizer is
/// (2 Phi(kappa) - 1) per coordinate. Throws OutOfSupport when any
/// coordinate lies strictly outside the box.
double log_prob(const Vec& u, const Vec& u_star, const StochasticCfg& cfg);

/// Score in the policy parameters: (1/sigma^2) * grad_u_star^T (u - u_star),
/// with grad_u_star the m x d sensitivity of the planned action. The
/// normalizer drops out because the box translates with the mean.
Vec score(const Mat& grad_u_star, const Vec& u, const Vec& u_star,
          double sigma);

}  // namespace diffop::policy
