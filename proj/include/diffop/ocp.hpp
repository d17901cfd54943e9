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
#include <string>
#include <vector>

#include "diffop/models.hpp"
#include "diffop/types.hpp"

namespace diffop::ocp {

/// One smooth inequality g(x, u) <= 0 (dim outputs) applied at every
/// planning step. hess is optional; when absent the constraint is treated as
/// affine (zero curvature).
struct GeneralConstraint {
  int dim = 1;
  std::function<Vec(const Vec& x, const Vec& u)> g;
  std::function<Mat(const Vec& x, const Vec& u)> jac_x;  // dim x n
  std::function<Mat(const Vec& x, const Vec& u)> jac_u;  // dim x m
  std::function<std::vector<Mat>(const Vec& x, const Vec& u)> hess;  // dim of (n+m)^2
};

/// Terminal inequality g(x_H) <= 0.
struct TerminalConstraint {
  int dim = 1;
  std::function<Vec(const Vec& x)> g;
  std::function<Mat(const Vec& x)> jac;  // dim x n
  std::function<std::vector<Mat>(const Vec& x)> hess;  // dim of n x n
};

/// Constraint set for a plan. The solver enforces the action box; general
/// callbacks participate in active-set detection, multiplier recovery, and
/// differentiation (their violation is reported, not resolved).
struct ConstraintSpec {
  Vec u_lower, u_upper;  // size m, or empty for unbounded
  std::vector<GeneralConstraint> general;
  std::vector<TerminalConstraint> terminal;

  bool has_box() const { return u_lower.size() > 0 || u_upper.size() > 0; }
  bool empty() const {
    return !has_box() && general.empty() && terminal.empty();
  }
  void validate(int m) const;
};

struct SolverCfg {
  double grad_tol = 1e-10;
  int max_iters = 200;
  /// Armijo sufficient-decrease constant; step halving.
  double armijo_c = 1e-4;
  /// Optional stacked action sequence (H*m) used as the starting iterate.
  Vec warm_start;
};

struct PlanSolution {
  Mat states;   // (H+1) x n
  Mat actions;  // H x m
  /// Multipliers for the stacked constraint rows z: initial-state pin, then
  /// per step the active inequalities followed by the dynamics defect, then
  /// terminal active inequalities. Active rows are oriented so multipliers
  /// of inequalities come out nonnegative at a KKT point.
  Vec multipliers;
  std::vector<int> active_set;  // global inequality indices, sorted
  double cost = 0.0;
  double kkt_residual = 0.0;
  int iterations = 0;
  bool converged = false;
  bool nonconvex_detected = false;
  /// Some active multiplier is near zero; the implicit gradient is not
  /// differentiable at such points.
  bool weakly_active = false;

  Vec u_flat() const;
};

/// A planning problem bound to a fixed parameter vector. Derivative
/// evaluations carry parameter blocks already assembled to the full
/// d-column layout, so downstream code needs no offset knowledge.
/// The bool argument requests parameter blocks; value-only callbacks keep
/// line searches cheap.
struct BoundProblem {
  int n = 0, m = 0, H = 1, d = 0;
  std::function<models::StageEval(const Vec&, const Vec&, bool)> stage;
  std::function<double(const Vec&, const Vec&)> stage_value;
  std::function<models::TerminalEval(const Vec&, bool)> terminal;
  std::function<double(const Vec&)> terminal_value;
  std::function<models::DynEval(const Vec&, const Vec&, bool)> dynamics;
  std::function<Vec(const Vec&, const Vec&)> dynamics_value;
};

/// Binds a model at theta (flat, length model.dim_theta()).
BoundProblem bind(const models::Model& model, const Vec& theta);

double unrolled_cost(const BoundProblem& pb, const Vec& x_init,
                     const Vec& u_seq);
double unrolled_cost(const models::Model& model, const Vec& theta,
                     const Vec& x_init, const Vec& u_seq);

/// Derivatives of the unrolled cost in the stacked action sequence,
/// assembled by backward accumulation (adjoint for the gradient, forward
/// state sensitivities for the Hessian and the mixed parameter block).
struct UnrolledDerivs {
  double cost = 0.0;
  Vec grad;    // H*m
  Mat hess;    // H*m x H*m
  Mat mixed;   // H*m x d, empty unless requested
  Mat states;  // (H+1) x n
};
UnrolledDerivs unrolled_derivs(const BoundProblem& pb, const Vec& x_init,
                               const Vec& u_seq, bool with_theta = false);
UnrolledDerivs unrolled_derivs(const models::Model& model, const Vec& theta,
                               const Vec& x_init, const Vec& u_seq,
                               bool with_theta = false);

/// Solves the H-step plan by projected damped Newton on the unrolled cost.
/// converged implies the infinity norm of the projected gradient is at most
/// cfg.grad_tol. Multipliers, active set, and the KKT residual are always
/// populated on return. Deterministic for identical inputs.
PlanSolution solve_plan(const BoundProblem& pb, const Vec& x_init,
                        const ConstraintSpec& constraints,
                        const SolverCfg& cfg);
PlanSolution solve_plan(const models::Model& model, const Vec& theta,
                        const Vec& x_init, const ConstraintSpec& constraints,
                        const SolverCfg& cfg);

/// Max norm over the stacked stationarity residual grad_zeta J - A^T lambda,
/// the stacked constraint values z, and any positive inequality violation.
/// Uses the plan's recorded multipliers and active set.
double kkt_residual(const BoundProblem& pb, const Vec& x_init,
                    const PlanSolution& plan,
                    const ConstraintSpec& constraints);
double kkt_residual(const models::Model& model, const Vec& theta,
                    const Vec& x_init, const PlanSolution& plan,
                    const ConstraintSpec& constraints);

/// Indices of inequality constraints with g >= -tol (inclusive), in the
/// deterministic global order: per step lower-box coords, upper-box coords,
/// general constraint outputs; terminal constraints last.
std::vector<int> detect_active_set(const ConstraintSpec& constraints,
                                   const Mat& states, const Mat& actions,
                                   double tol = 1e-8);

/// Total number of inequality slots for an H-step plan.
int num_inequalities(const ConstraintSpec& constraints, int H, int m);

/// Values of every inequality slot, -inf marking absent box bounds.
Vec eval_inequalities(const ConstraintSpec& constraints, const Mat& states,
                      const Mat& actions);

/// Stacks states and actions into zeta = (x_0, u_0, x_1, ..., x_H).
Vec stack_zeta(const Mat& states, const Mat& actions);

/// Newton polish of the KKT system at a frozen active set. Used to refine
/// externally constructed plans (including ones with active general
/// constraints, which solve_plan does not enforce) to tight stationarity.
PlanSolution refine_plan_fixed_active(const BoundProblem& pb,
                                      const Vec& x_init,
                                      const ConstraintSpec& constraints,
                                      const std::vector<int>& active_set,
                                      const PlanSolution& init, double tol,
                                      int max_iters = 50);

/// Internal assembly shared by kkt_residual, solve_plan diagnostics, and the
/// implicit-differentiation module: gradient of J in zeta, the active
/// constraint Jacobian A, constraint values z, and least-squares multipliers.
struct KktPoint {
  Vec zeta;
  Vec grad_zeta;
  Mat A;   // n_z x dim(zeta)
  Vec z;   // n_z
  Vec lambda;
  std::vector<int> active;
  double stationarity = 0.0;  // inf norm of grad_zeta - A^T lambda
  double feasibility = 0.0;   // max(|z|_inf, positive part of inactive g)
};
KktPoint assemble_kkt_point(const BoundProblem& pb, const Vec& x_init,
                            const Mat& states, const Mat& actions,
                            const ConstraintSpec& constraints,
                            const std::vector<int>& active_set);

/// Curvature blocks of the Lagrangian at fixed multipliers:
/// D = hess_zeta J - sum_r lambda_r hess_zeta z_r, and with with_theta the
/// mixed blocks B = d/dtheta of grad_zeta L and C = d/dtheta of z.
struct KktDerivativeBlocks {
  Mat D;  // dim(zeta) square
  Mat B;  // dim(zeta) x d
  Mat C;  // n_z x d
};
KktDerivativeBlocks lagrangian_blocks(const BoundProblem& pb,
                                      const Vec& x_init, const Mat& states,
                                      const Mat& actions,
                                      const ConstraintSpec& constraints,
                                      const std::vector<int>& active_set,
                                      const Vec& lambda, bool with_theta);

}  // namespace diffop::ocp
