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

#include <Eigen/Eigenvalues>
#include <cmath>
#include <random>

#include "diffop/errors.hpp"
#include "diffop/models.hpp"
#include "diffop/numkit.hpp"
#include "diffop/ocp.hpp"
#include "diffop/types.hpp"

using diffop::Mat;
using diffop::Vec;
namespace md = diffop::models;
namespace nk = diffop::numkit;
namespace op = diffop::ocp;

namespace {

// One-step scalar instance with J(u; x) = u^2 + (x + u)^2: unit control
// penalty realized through the factor parameterization, terminal weight one,
// dynamics x' = x + u.
struct ScalarInstance {
  md::ModelSpec spec;
  Vec theta;
  md::Model model() const { return md::Model(spec); }
};

ScalarInstance scalar_instance() {
  ScalarInstance si;
  si.spec.n = 1;
  si.spec.m = 1;
  si.spec.H = 1;
  si.spec.dt = 1.0;
  si.spec.cost_kind = md::CostKind::kQuadratic;
  si.spec.dynamics_kind = md::DynamicsKind::kLinearEuler;
  const md::Model model(si.spec);
  md::PolicyParams p;
  p.theta_c = (Vec(2) << 0.0, std::sqrt(1.0 - md::kRMin)).finished();
  p.theta_H = (Vec(1) << 1.0).finished();
  p.theta_f = (Vec(2) << 0.0, 1.0).finished();
  si.theta = model.pack(p);
  return si;
}

md::ModelSpec lqr_spec(int n, int m, int H) {
  md::ModelSpec sp;
  sp.n = n;
  sp.m = m;
  sp.H = H;
  sp.dt = 0.1;
  sp.cost_kind = md::CostKind::kQuadratic;
  sp.dynamics_kind = md::DynamicsKind::kLinearEuler;
  return sp;
}

Vec random_vec(std::mt19937& gen, int n, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Vec v(n);
  for (int i = 0; i < n; ++i) v[i] = u(gen);
  return v;
}

Vec random_lqr_theta(std::mt19937& gen, const md::Model& model) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  md::PolicyParams p = model.default_params();
  const int n = model.n(), m = model.m();
  for (int j = 0; j < n; ++j) p.theta_c[j] = 0.6 + 0.8 * u01(gen);
  for (int a = 0; a < m; ++a)
    for (int b = 0; b < m; ++b)
      p.theta_c[n + a * m + b] = (a == b) ? 0.5 + 0.5 * u01(gen)
                                          : 0.2 * (u01(gen) - 0.5);
  for (int j = 0; j < model.dim_theta_H(); ++j) p.theta_H[j] = 0.5 + u01(gen);
  for (int j = 0; j < model.dim_theta_f(); ++j) {
    p.theta_f[j] = 0.5 * (2.0 * u01(gen) - 1.0);
  }
  return model.pack(p);
}

}  // namespace

TEST_CASE("unrolled cost substitutes the dynamics into the objective") {
  const ScalarInstance si = scalar_instance();
  const md::Model model = si.model();
  const Vec x1 = Vec::Constant(1, 1.0);
  CHECK(std::abs(op::unrolled_cost(model, si.theta, x1, Vec::Zero(1)) - 1.0) <=
        1e-12);
  // At the goal with zero action and zero model drift nothing accrues.
  md::PolicyParams p = model.unpack(si.theta);
  p.theta_f.setZero();
  CHECK(op::unrolled_cost(model, model.pack(p), Vec::Zero(1), Vec::Zero(1)) ==
        0.0);
}

TEST_CASE("unrolled cost equals independent per-step accumulation") {
  std::mt19937 gen(101);
  const md::ModelSpec sp = lqr_spec(3, 2, 3);
  const md::Model model(sp);
  const Vec theta = random_lqr_theta(gen, model);
  const md::PolicyParams p = model.unpack(theta);
  const Vec x0 = random_vec(gen, 3, 1.0);
  const Vec useq = random_vec(gen, 6, 1.0);

  double total = 0.0;
  Vec x = x0;
  for (int i = 0; i < sp.H; ++i) {
    const Vec u = useq.segment(2 * i, 2);
    total += model.stage_cost(p.theta_c, x, u);
    x = model.dynamics_step(p.theta_f, x, u);
  }
  total += model.terminal_cost(p.theta_H, x);
  CHECK(std::abs(op::unrolled_cost(model, theta, x0, useq) - total) <= 1e-12);
}

TEST_CASE("unrolled derivatives match differences and keep lqr curvature constant") {
  std::mt19937 gen(103);
  const md::ModelSpec sp = lqr_spec(2, 1, 3);
  const md::Model model(sp);
  const Vec theta = random_lqr_theta(gen, model);
  const Vec x0 = random_vec(gen, 2, 1.0);
  const Vec u1 = random_vec(gen, 3, 1.0);
  const Vec u2 = random_vec(gen, 3, 1.0);

  const op::UnrolledDerivs d1 = op::unrolled_derivs(model, theta, x0, u1, true);
  const op::UnrolledDerivs d2 = op::unrolled_derivs(model, theta, x0, u2, true);
  CHECK((d1.hess - d2.hess).lpNorm<Eigen::Infinity>() <= 1e-12);
  CHECK((d1.hess - d1.hess.transpose()).lpNorm<Eigen::Infinity>() <= 1e-10);

  auto cost_u = [&](const Vec& u) {
    return op::unrolled_cost(model, theta, x0, u);
  };
  CHECK((nk::fd_gradient(cost_u, u1) - d1.grad).lpNorm<Eigen::Infinity>() <=
        1e-5);
  CHECK(nk::rel_err(d1.hess, nk::fd_hessian(cost_u, u1)) <= 1e-4);

  Mat mixed_fd(3, model.dim_theta());
  for (int j = 0; j < model.dim_theta(); ++j) {
    const double h = nk::fd_step(0.0, theta[j]);
    Vec tp = theta, tm = theta;
    tp[j] += h;
    tm[j] -= h;
    mixed_fd.col(j) = (op::unrolled_derivs(model, tp, x0, u1, false).grad -
                       op::unrolled_derivs(model, tm, x0, u1, false).grad) /
                      (2.0 * h);
  }
  CHECK(nk::rel_err(d1.mixed, mixed_fd) <= 1e-5);
}

TEST_CASE("solve_plan finds the interior optimum of the scalar instance") {
  const ScalarInstance si = scalar_instance();
  op::SolverCfg cfg;
  const op::PlanSolution plan = op::solve_plan(
      si.model(), si.theta, Vec::Constant(1, 1.0), op::ConstraintSpec{}, cfg);
  CHECK(plan.converged);
  CHECK(std::abs(plan.actions(0, 0) - (-0.5)) <= 1e-8);
  CHECK(plan.active_set.empty());
  CHECK(plan.kkt_residual <= cfg.grad_tol);
  CHECK(std::abs(plan.states(1, 0) - 0.5) <= 1e-8);
}

TEST_CASE("solve_plan returns zero actions when starting at the goal") {
  std::mt19937 gen(107);
  const md::ModelSpec sp = lqr_spec(3, 2, 3);
  const md::Model model(sp);
  const Vec theta = random_lqr_theta(gen, model);
  op::SolverCfg cfg;
  const op::PlanSolution plan = op::solve_plan(model, theta, Vec::Zero(3),
                                               op::ConstraintSpec{}, cfg);
  CHECK(plan.converged);
  CHECK(plan.actions.lpNorm<Eigen::Infinity>() <= 1e-12);
  CHECK(plan.iterations == 0);
}

TEST_CASE("solve_plan clamps to an active box bound with a positive multiplier") {
  const ScalarInstance si = scalar_instance();
  const md::Model model = si.model();
  op::ConstraintSpec cons;
  cons.u_lower = Vec::Constant(1, -0.3);
  cons.u_upper = Vec::Constant(1, 0.3);
  op::SolverCfg cfg;
  const Vec x1 = Vec::Constant(1, 1.0);
  const op::PlanSolution plan = op::solve_plan(model, si.theta, x1, cons, cfg);
  CHECK(plan.converged);
  CHECK(plan.actions(0, 0) == -0.3);
  REQUIRE(plan.active_set.size() == 1);
  CHECK(plan.active_set[0] == 0);
  CHECK_FALSE(plan.weakly_active);
  REQUIRE(plan.multipliers.size() == 3);
  CHECK(std::abs(plan.multipliers[0] - 1.4) <= 1e-8);  // initial-state pin
  CHECK(std::abs(plan.multipliers[1] - 0.8) <= 1e-8);  // active lower bound
  CHECK(std::abs(plan.multipliers[2] - 1.4) <= 1e-8);  // dynamics defect
  CHECK(op::kkt_residual(model, si.theta, x1, plan, cons) <= 1e-8);

  // Brute-force grid over the feasible interval confirms the bound is the
  // constrained minimizer.
  double best_u = 0.0, best_c = 1e300;
  for (int i = 0; i <= 60000; ++i) {
    const double u = -0.3 + 1e-5 * i;
    const double c =
        op::unrolled_cost(model, si.theta, x1, Vec::Constant(1, u));
    if (c < best_c) {
      best_c = c;
      best_u = u;
    }
  }
  CHECK(std::abs(best_u - plan.actions(0, 0)) <= 1e-4);
}

TEST_CASE("kkt residual vanishes at the optimum and grows when perturbed") {
  const ScalarInstance si = scalar_instance();
  const md::Model model = si.model();
  const op::BoundProblem pb = op::bind(model, si.theta);
  const Vec x1 = Vec::Constant(1, 1.0);
  op::SolverCfg cfg;
  cfg.grad_tol = 1e-12;
  const op::PlanSolution plan =
      op::solve_plan(pb, x1, op::ConstraintSpec{}, cfg);
  CHECK(plan.converged);
  CHECK(op::kkt_residual(pb, x1, plan, op::ConstraintSpec{}) <= 1e-12);

  // Moving the action by 0.1 moves the reduced gradient by at least
  // 0.1 * lambda_min of the reduced Hessian (here exactly 0.4).
  const op::UnrolledDerivs ud =
      op::unrolled_derivs(pb, x1, Vec::Constant(1, plan.actions(0, 0) + 0.1));
  const Eigen::SelfAdjointEigenSolver<Mat> eig(ud.hess);
  const double lam_min = eig.eigenvalues().minCoeff();
  CHECK(ud.grad.lpNorm<Eigen::Infinity>() >= 0.1 * lam_min * (1.0 - 1e-9));

  // The stacked residual with the recorded multipliers sees the perturbation
  // through the stationarity rows as well.
  op::PlanSolution bumped = plan;
  bumped.actions(0, 0) += 0.1;
  bumped.states.row(1) = ud.states.row(1);
  CHECK(op::kkt_residual(pb, x1, bumped, op::ConstraintSpec{}) >= 0.19);
}

TEST_CASE("converged lqr solutions carry tiny stacked residuals") {
  std::mt19937 gen(109);
  op::SolverCfg cfg;
  cfg.grad_tol = 1e-12;
  for (int rep = 0; rep < 5; ++rep) {
    const md::ModelSpec sp = lqr_spec(3, 2, 3);
    const md::Model model(sp);
    const Vec theta = random_lqr_theta(gen, model);
    const Vec x0 = random_vec(gen, 3, 2.0);
    const op::PlanSolution plan =
        op::solve_plan(model, theta, x0, op::ConstraintSpec{}, cfg);
    CHECK(plan.converged);
    CHECK(plan.kkt_residual <= 1e-10);
  }
}

TEST_CASE("active set detection is inclusive at the tolerance boundary") {
  op::ConstraintSpec cons;
  cons.u_lower = Vec::Constant(1, -0.25);
  cons.u_upper = Vec::Constant(1, 0.25);
  const double tol = std::ldexp(1.0, -26);  // exactly representable margins
  Mat states = Mat::Zero(2, 1);

  auto detect_at = [&](double u) {
    Mat actions(1, 1);
    actions << u;
    return op::detect_active_set(cons, states, actions, tol);
  };

  CHECK(detect_at(0.0).empty());                       // interior
  CHECK(detect_at(-0.25) == std::vector<int>{0});      // on the lower bound
  CHECK(detect_at(0.25) == std::vector<int>{1});       // on the upper bound
  CHECK(detect_at(-0.25 + 2.0 * tol).empty());         // margin -2 tol: out
  CHECK(detect_at(-0.25 + tol) == std::vector<int>{0});        // exactly -tol
  CHECK(detect_at(-0.25 + 0.5 * tol) == std::vector<int>{0});  // -tol/2: in

  // Absent bounds are marked unbounded and never activate.
  op::ConstraintSpec lower_only;
  lower_only.u_lower = Vec::Constant(1, -0.25);
  Mat actions(1, 1);
  actions << 100.0;
  CHECK(op::detect_active_set(lower_only, states, actions, tol).empty());
}

TEST_CASE("warm started re-solves accept the incumbent immediately") {
  std::mt19937 gen(113);
  const md::ModelSpec sp = lqr_spec(2, 1, 3);
  const md::Model model(sp);
  const Vec theta = random_lqr_theta(gen, model);
  const Vec x0 = random_vec(gen, 2, 1.5);
  op::SolverCfg cfg;
  const op::PlanSolution plan =
      op::solve_plan(model, theta, x0, op::ConstraintSpec{}, cfg);
  CHECK(plan.converged);

  op::SolverCfg warm = cfg;
  warm.warm_start = plan.u_flat();
  const op::PlanSolution again =
      op::solve_plan(model, theta, x0, op::ConstraintSpec{}, warm);
  CHECK(again.converged);
  CHECK(again.iterations <= 2);
  CHECK((again.actions - plan.actions).lpNorm<Eigen::Infinity>() <= 1e-12);
}

TEST_CASE("solve_plan is bitwise deterministic") {
  std::mt19937 gen(127);
  const md::ModelSpec sp = lqr_spec(3, 2, 3);
  const md::Model model(sp);
  const Vec theta = random_lqr_theta(gen, model);
  const Vec x0 = random_vec(gen, 3, 1.0);
  op::SolverCfg cfg;
  const op::PlanSolution a =
      op::solve_plan(model, theta, x0, op::ConstraintSpec{}, cfg);
  const op::PlanSolution b =
      op::solve_plan(model, theta, x0, op::ConstraintSpec{}, cfg);
  CHECK((a.actions - b.actions).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK((a.states - b.states).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK((a.multipliers - b.multipliers).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK(a.iterations == b.iterations);
}

TEST_CASE("newton on a quadratic agrees with the closed-form step") {
  std::mt19937 gen(131);
  const md::ModelSpec sp = lqr_spec(3, 2, 3);
  const md::Model model(sp);
  const Vec theta = random_lqr_theta(gen, model);
  const Vec x0 = random_vec(gen, 3, 1.0);
  const op::UnrolledDerivs d0 =
      op::unrolled_derivs(model, theta, x0, Vec::Zero(6), false);
  // Quadratic objective: the Newton step from zero lands on the optimum.
  const op::UnrolledDerivs dH =
      op::unrolled_derivs(model, theta, x0, Vec::Zero(6), false);
  const Vec u_qp = -nk::solve_linear(dH.hess, d0.grad);
  op::SolverCfg cfg;
  const op::PlanSolution plan =
      op::solve_plan(model, theta, x0, op::ConstraintSpec{}, cfg);
  CHECK(plan.converged);
  CHECK((plan.u_flat() - u_qp).lpNorm<Eigen::Infinity>() <= 1e-8);
}

TEST_CASE("a bound resting exactly on the optimum is flagged weakly active") {
  const ScalarInstance si = scalar_instance();
  op::ConstraintSpec cons;
  cons.u_lower = Vec::Constant(1, -0.5);
  cons.u_upper = Vec::Constant(1, 0.5);
  op::SolverCfg cfg;
  const op::PlanSolution plan = op::solve_plan(
      si.model(), si.theta, Vec::Constant(1, 1.0), cons, cfg);
  CHECK(plan.converged);
  CHECK(plan.weakly_active);
}

TEST_CASE("nonconvex curvature is flagged and descent still converges") {
  md::ModelSpec sp;
  sp.n = 1;
  sp.m = 1;
  sp.H = 1;
  sp.dt = 1.0;
  sp.cost_kind = md::CostKind::kQuadratic;
  sp.dynamics_kind = md::DynamicsKind::kAnalytic;
  md::Model model(sp);
  model.set_analytic_step([](const Vec& x, const Vec& u) {
    Vec out(1);
    out[0] = x[0] + std::sin(3.0 * u[0]);
    return out;
  });
  md::PolicyParams p;
  p.theta_c = Vec::Zero(2);  // control penalty at the floor only
  p.theta_H = Vec::Constant(1, 1.0);
  p.theta_f = Vec(0);
  const Vec theta = model.pack(p);

  op::SolverCfg cfg;
  cfg.grad_tol = 1e-6;
  cfg.max_iters = 2000;
  cfg.warm_start = Vec::Constant(1, 0.4);  // concave region of the landscape
  const op::PlanSolution plan = op::solve_plan(
      model, theta, Vec::Constant(1, 1.0), op::ConstraintSpec{}, cfg);
  CHECK(plan.nonconvex_detected);
  CHECK(plan.converged);
  const op::UnrolledDerivs ud =
      op::unrolled_derivs(model, theta, Vec::Constant(1, 1.0), plan.u_flat());
  CHECK(ud.grad.lpNorm<Eigen::Infinity>() <= 1e-6);
}

TEST_CASE("fixed active-set refinement polishes to tight stationarity") {
  const ScalarInstance si = scalar_instance();
  const md::Model model = si.model();
  const op::BoundProblem pb = op::bind(model, si.theta);
  op::ConstraintSpec cons;
  cons.u_lower = Vec::Constant(1, -0.3);
  cons.u_upper = Vec::Constant(1, 0.3);
  const Vec x1 = Vec::Constant(1, 1.0);
  op::SolverCfg cfg;
  op::PlanSolution plan = op::solve_plan(pb, x1, cons, cfg);
  REQUIRE(plan.converged);
  const op::PlanSolution polished = op::refine_plan_fixed_active(
      pb, x1, cons, plan.active_set, plan, 1e-12);
  CHECK(polished.kkt_residual <= 1e-12);
  CHECK(std::abs(polished.actions(0, 0) - (-0.3)) <= 1e-12);
}

TEST_CASE("constraint specs validate their shapes and ordering") {
  op::ConstraintSpec cons;
  cons.u_lower = Vec::Constant(2, 1.0);
  cons.u_upper = Vec::Constant(2, -1.0);
  CHECK_THROWS_AS(cons.validate(2), diffop::ConfigError);
  cons.u_upper = Vec::Constant(3, 2.0);
  CHECK_THROWS_AS(cons.validate(2), diffop::ConfigError);

  const ScalarInstance si = scalar_instance();
  op::SolverCfg cfg;
  CHECK_THROWS_AS((void)op::solve_plan(si.model(), si.theta, Vec::Zero(2),
                                       op::ConstraintSpec{}, cfg),
                  diffop::DimensionMismatch);
}
