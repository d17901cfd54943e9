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

// Parameter sensitivity of a solved plan through its stationarity system.
// Differentiating grad_zeta L = 0 and z = 0 at a fixed active set gives the
// Jacobian of the full solution zeta*, and with it the first planned action,
// in the problem parameters. A reduced route for plans without binding
// inequalities and a finite-difference re-solve oracle back it up, and a
// crosscheck report compares every available route without aborting.

#include <string>
#include <vector>

#include <json.hpp>

#include "diffop/models.hpp"
#include "diffop/ocp.hpp"
#include "diffop/types.hpp"

namespace diffop::implicit {

/// Blocks of the differentiated stationarity system at a solved plan:
/// A dz = C dtheta (constraints) and D dz - A^T dlambda = -B dtheta
/// (stationarity), with the plan's multipliers and active set recorded.
/// D is symmetric by construction.
struct KktBlocks {
  Mat A;  // n_z x dim(zeta), active constraint Jacobian
  Mat B;  // dim(zeta) x d, mixed parameter block of grad_zeta L
  Mat C;  // n_z x d, parameter block of the constraint values
  Mat D;  // dim(zeta) x dim(zeta), Lagrangian curvature
  Vec lambda;
  Vec z;
  std::vector<int> active;
  int n = 0, m = 0, H = 0, d = 0;
};

KktBlocks build_kkt_blocks(const ocp::BoundProblem& pb, const Vec& x_init,
                           const ocp::PlanSolution& plan,
                           const ocp::ConstraintSpec& constraints);
KktBlocks build_kkt_blocks(const models::Model& model, const Vec& theta,
                           const Vec& x_init, const ocp::PlanSolution& plan,
                           const ocp::ConstraintSpec& constraints);

/// Sensitivity of the full stacked solution and of the first action.
struct PolicyGradient {
  Mat dzeta;  // dim(zeta) x d
  Mat du0;    // m x d, rows of dzeta for u_0
};

/// Solves the differentiated KKT system:
///   dzeta = D^{-1} A^T (A D^{-1} A^T)^{-1} (A D^{-1} B - C) - D^{-1} B.
/// Throws SingularMatrix when D (or the Schur complement) is singular and
/// RankDeficient when A loses row rank.
PolicyGradient grad_kkt(const KktBlocks& kb);
PolicyGradient grad_kkt(const models::Model& model, const Vec& theta,
                        const Vec& x_init, const ocp::PlanSolution& plan,
                        const ocp::ConstraintSpec& constraints);

/// Reduced route for plans with no binding inequalities: the action-sequence
/// sensitivity -[hess_u J]^{-1} [d grad_u J / dtheta].
struct UnconstrainedGradient {
  Mat du_seq;  // H*m x d
  Mat du0;     // m x d, first action block
};

/// Throws ActiveConstraintsPresent when the plan has a nonempty active set.
UnconstrainedGradient grad_unconstrained(const models::Model& model,
                                         const Vec& theta, const Vec& x_init,
                                         const ocp::PlanSolution& plan);
UnconstrainedGradient grad_unconstrained(const ocp::BoundProblem& pb,
                                         const Vec& x_init,
                                         const ocp::PlanSolution& plan);

/// Finite-difference oracle: central differences of the first planned action
/// through full re-solves at perturbed parameters, warm-started from the
/// base plan. h <= 0 selects the default step 1e-5 * (1 + |theta_j|).
Mat fd_grad_resolve(const models::Model& model, const Vec& theta,
                    const Vec& x_init, const ocp::ConstraintSpec& constraints,
                    const ocp::SolverCfg& cfg, double h = 0.0);

/// Comparison of every gradient route that applies at a given problem.
/// Failures and reliability caveats become annotations, never exceptions.
struct GradReport {
  struct Route {
    std::string name;  // "kkt", "unconstrained", "fd_resolve"
    Mat du0;
  };
  struct Pair {
    std::string a, b;
    double rel_err = 0.0;
  };
  std::vector<Route> routes;
  std::vector<Pair> pairs;
  std::vector<std::string> warnings;
  double worst_rel_err = 0.0;  // max over pairs; 0 with fewer than 2 routes
  bool reliable = true;        // false when the plan did not converge

  nlohmann::json to_json() const;
};

GradReport crosscheck(const models::Model& model, const Vec& theta,
                      const Vec& x_init,
                      const ocp::ConstraintSpec& constraints,
                      const ocp::SolverCfg& cfg, bool with_fd = true);

}  // namespace diffop::implicit
