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

#include "diffop/policy.hpp"

#include <cmath>

#include "diffop/errors.hpp"

namespace diffop::policy {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;  // log(2*pi)

std::uint64_t mix64(std::uint64_t z) {
  z ^= z >> 30;
  z *= 0xBF58476D1CE4E5B9ull;
  z ^= z >> 27;
  z *= 0x94D049BB133111EBull;
  z ^= z >> 31;
  return z;
}

}  // namespace

double StochasticCfg::half_width() const {
  return rule == TruncationRule::kBetaSigmaSq ? beta * sigma * sigma
                                              : beta * sigma;
}

double StochasticCfg::kappa() const { return half_width() / sigma; }

void StochasticCfg::validate() const {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    throw ConfigError("sigma must be positive");
  }
  if (!(beta > 0.0) || !std::isfinite(beta)) {
    throw ConfigError("beta must be positive");
  }
}

CounterRng CounterRng::keyed(std::uint64_t seed, std::uint64_t iteration,
                             std::uint64_t trajectory, std::uint64_t step) {
  std::uint64_t h = seed;
  h = mix64(h + 0x9E3779B97F4A7C15ull + iteration);
  h = mix64(h + 0x9E3779B97F4A7C15ull + trajectory);
  h = mix64(h + 0x9E3779B97F4A7C15ull + step);
  CounterRng rng;
  rng.state = h;
  return rng;
}

std::uint64_t CounterRng::next_u64() {
  state += 0x9E3779B97F4A7C15ull;
  return mix64(state);
}

double CounterRng::next_uniform01() {
  // 53 mantissa bits, offset by half an ulp so 0 and 1 are unreachable.
  const std::uint64_t z = next_u64() >> 11;
  return (static_cast<double>(z) + 0.5) * 0x1.0p-53;
}

double normal_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double normal_icdf(double p) {
  if (!(p > 0.0) || !(p < 1.0)) {
    throw DomainError("normal_icdf requires 0 < p < 1");
  }
  // Rational initial guess (Acklam), then Newton steps on Phi(x) - p, which
  // polish the result to full double precision.
  static const double a[6] = {-3.969683028665376e+01, 2.209460984245205e+02,
                              -2.759285104469687e+02, 1.383577518672690e+02,
                              -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[5] = {-5.447609879822406e+01, 1.615858368580409e+02,
                              -1.556989798598866e+02, 6.680131188771972e+01,
                              -1.328068155288572e+01};
  static const double c[6] = {-7.784894002430293e-03, -3.223964580411365e-01,
                              -2.400758277161838e+00, -2.549732539343734e+00,
                              4.374664141464968e+00,  2.938163982698783e+00};
  static const double dd[4] = {7.784695709041462e-03, 3.224671290700398e-01,
                               2.445134137142996e+00, 3.754408661907416e+00};
  const double p_low = 0.02425;
  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((dd[0] * q + dd[1]) * q + dd[2]) * q + dd[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) *
        q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q +
          c[5]) /
        ((((dd[0] * q + dd[1]) * q + dd[2]) * q + dd[3]) * q + 1.0);
  }
  for (int i = 0; i < 2; ++i) {
    const double e = normal_cdf(x) - p;
    const double d = normal_pdf(x);
    if (d <= 0.0) break;
    x -= e / d;
  }
  return x;
}

Vec sample_action(const Vec& u_star, const StochasticCfg& cfg,
                  CounterRng& rng) {
  cfg.validate();
  const double w = cfg.half_width();
  const double kap = cfg.kappa();
  const double lo = normal_cdf(-kap);
  const double hi = normal_cdf(kap);
  Vec u(u_star.size());
  for (Eigen::Index j = 0; j < u_star.size(); ++j) {
    const double t = rng.next_uniform01();
    const double p = lo + t * (hi - lo);
    double dev = cfg.sigma * normal_icdf(p);
    // The transform is exact up to rounding; the clamp pins the support.
    if (dev > w) dev = w;
    if (dev < -w) dev = -w;
    u(j) = u_star(j) + dev;
  }
  return u;
}

double log_prob(const Vec& u, const Vec& u_star, const StochasticCfg& cfg) {
  cfg.validate();
  if (u.size() != u_star.size()) {
    throw DimensionMismatch("u and u_star lengths differ");
  }
  const double w = cfg.half_width();
  const Vec r = u - u_star;
  for (Eigen::Index j = 0; j < r.size(); ++j) {
    if (std::abs(r(j)) > w) {
      throw OutOfSupport("action coordinate outside the truncation box");
    }
  }
  const double m = static_cast<double>(u.size());
  const double z = 2.0 * normal_cdf(cfg.kappa()) - 1.0;
  return -r.squaredNorm() / (2.0 * cfg.sigma * cfg.sigma) -
         m * std::log(cfg.sigma) - 0.5 * m * kLog2Pi - m * std::log(z);
}

Vec score(const Mat& grad_u_star, const Vec& u, const Vec& u_star,
          double sigma) {
  if (u.size() != u_star.size() || grad_u_star.rows() != u.size()) {
    throw DimensionMismatch("score: residual and sensitivity shapes differ");
  }
  if (!(sigma > 0.0)) throw DomainError("score requires sigma > 0");
  return grad_u_star.transpose() * (u - u_star) / (sigma * sigma);
}

}  // namespace diffop::policy
