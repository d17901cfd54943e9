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

#include <string>
#include <vector>

#include "diffop/envs.hpp"
#include "diffop/models.hpp"
#include "diffop/ocp.hpp"
#include "diffop/policy.hpp"
#include "diffop/types.hpp"

namespace diffop::train {

/// One sampled episode. Row t of states is x_t; actions, plan_means,
/// jacobians, and stage_costs have one entry per step t = 0..T-1.
struct Trajectory {
  int k = 0;  ///< iteration the episode belongs to
  int n = 0;  ///< index within the batch
  Mat states;                  ///< (T+1) x n_env
  Mat actions;                 ///< T x m, sampled controls
  Mat plan_means;              ///< T x m, planned first actions u*_t
  std::vector<Mat> jacobians;  ///< T entries, m x d parameter sensitivities
  Vec stage_costs;             ///< T realized stage costs
  double total_cost = 0.0;     ///< sum of stage_costs
  bool valid = true;
  std::string failure;  ///< diagnostic when valid is false
};

/// Experiment configuration for a policy-gradient run. theta0, when
/// nonempty, overrides the data-driven initialization.
struct TrainCfg {
  int K = 100;       ///< gradient iterations
  int N = 10;        ///< trajectories per iteration
  double eta = 0.01; ///< step size
  int T = 20;        ///< episode length
  policy::StochasticCfg stochastic;
  ocp::SolverCfg solver;
  std::string env = "cartpole";
  models::ModelSpec spec;
  Vec theta0;
  /// Subtract the batch mean cost inside the estimator. Off keeps the plain
  /// score-weighted sum.
  bool baseline = false;
  /// Worker threads for the batch. 0 reads DIFFOP_THREADS, falling back to
  /// the hardware count.
  int threads = 0;
  int checkpoint_every = 10;
  std::string checkpoint_dir;  ///< empty disables checkpoint files

  /// Raises ConfigError unless K >= 0, N >= 1, T >= 1, eta >= 0 and the
  /// nested configs validate. K = 0 and eta = 0 are legal degenerate runs.
  void validate() const;
};

/// Per-iteration batch statistics over the valid trajectories.
struct IterationRecord {
  int k = 0;
  double mean_cost = 0.0;
  double p20 = 0.0;
  double p80 = 0.0;
  double grad_norm = 0.0;
  double wall_time_s = 0.0;
  int valid = 0;
  int failed = 0;
};

struct TrainResult {
  std::vector<IterationRecord> history;
  Vec theta;
  int total_failed = 0;
};

/// Order statistic with linear interpolation between ranks; p in [0, 1].
/// Throws DomainError on an empty sample or p outside [0, 1].
double percentile(std::vector<double> xs, double p);

/// Runs one episode: at every step the plan is re-solved at the current
/// state (warm-started from the previous step), the first-action parameter
/// sensitivity is recorded, and the applied action is drawn from the
/// truncated Gaussian keyed by (seed, k, n, t). sigma = 0 applies the plan
/// mean exactly. Throws SolverFailure with (k, n, t) context when a plan
/// solve does not converge.
Trajectory rollout(const envs::Env& env, const models::Model& model,
                   const Vec& theta, const TrainCfg& cfg, int k, int n);

/// Score-weighted cost average over the valid trajectories:
/// mean_n L(tau_n) * sum_t (1/sigma^2) jac_t^T (u_t - u*_t).
/// subtract_mean replaces L(tau_n) by L(tau_n) - mean L.
/// Throws NoValidTrajectories when no trajectory is valid.
Vec estimate_gradient(const std::vector<Trajectory>& trajs, double sigma,
                      bool subtract_mean = false);

/// K plain gradient steps of Algorithm-style training. Rollouts within an
/// iteration run in parallel; the reduction is an ordered sum over n, so
/// results are bit-reproducible from (cfg, seed) at any thread count.
/// Failed rollouts are excluded and counted; an iteration losing more than
/// half its batch aborts with SolverFailure after writing a checkpoint.
TrainResult train(const envs::Env& env, const TrainCfg& cfg);

/// Initial parameters: cost blocks at the identity-scaled defaults, the
/// dynamics block fit to 20 random-input trajectories of the true system
/// (least squares for the linear family, gradient descent for the convex
/// network residual).
Vec fit_initial_params(const envs::Env& env, const models::Model& model,
                       const TrainCfg& cfg);

/// Closed-form smoothness and sample-size constants. sample_size evaluates
/// N(eps, K, d, nu) = 2 m beta^2 M^2 T^2 L1^2 / (eps^2 mu^2) * log(2Kd/nu).
struct TheoryConstants {
  double L_C = 0.0;
  double eta_rec = 0.0;  ///< 1 / (4 L_C)
  double mu = 0.0, L1 = 0.0, L2 = 0.0, L3 = 0.0, M = 0.0;
  int m = 0;
  double beta = 0.0, sigma = 0.0;
  int T = 0;

  /// Throws DomainError unless eps > 0, K >= 1, d >= 1, nu in (0, 1).
  double sample_size(double eps, double K, double d, double nu) const;
};

/// Throws DomainError on any nonpositive input.
TheoryConstants theory_constants(double mu, double L1, double L2, double L3,
                                 double M, int m, double beta, double sigma,
                                 int T);

/// Empirical counterparts measured over states visited by stochastic
/// rollouts: the smallest eigenvalue of the action-sequence Hessian, the
/// largest spectral norm of the mixed parameter block, and the largest
/// episode cost magnitude.
struct MeasuredConstants {
  double mu_hat = 0.0;
  double L1_hat = 0.0;
  double M_hat = 0.0;
};

MeasuredConstants measure_constants(const envs::Env& env,
                                    const models::Model& model,
                                    const Vec& theta, const TrainCfg& cfg,
                                    int rollouts);

}  // namespace diffop::train
