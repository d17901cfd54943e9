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

#include "diffop/implicit.hpp"

#include <Eigen/QR>
#include <cmath>
#include <utility>

#include "diffop/errors.hpp"
#include "diffop/jsonio.hpp"
#include "diffop/numkit.hpp"

namespace diffop::implicit {

KktBlocks build_kkt_blocks(const ocp::BoundProblem& pb, const Vec& x_init,
                           const ocp::PlanSolution& plan,
                           const ocp::ConstraintSpec& constraints) {
  const ocp::KktPoint kp = ocp::assemble_kkt_point(
      pb, x_init, plan.states, plan.actions, constraints, plan.active_set);
  // Prefer the plan's recorded multipliers; fall back to the least-squares
  // recovery when the plan carries none.
  const Vec lambda =
      plan.multipliers.size() == kp.z.size() ? plan.multipliers : kp.lambda;
  const ocp::KktDerivativeBlocks kd =
      ocp::lagrangian_blocks(pb, x_init, plan.states, plan.actions,
                             constraints, plan.active_set, lambda, true);
  KktBlocks kb;
  kb.A = kp.A;
  kb.B = kd.B;
  kb.C = kd.C;
  kb.D = kd.D;
  kb.lambda = lambda;
  kb.z = kp.z;
  kb.active = plan.active_set;
  kb.n = pb.n;
  kb.m = pb.m;
  kb.H = pb.H;
  kb.d = pb.d;
  return kb;
}

KktBlocks build_kkt_blocks(const models::Model& model, const Vec& theta,
                           const Vec& x_init, const ocp::PlanSolution& plan,
                           const ocp::ConstraintSpec& constraints) {
  return build_kkt_blocks(ocp::bind(model, theta), x_init, plan, constraints);
}

PolicyGradient grad_kkt(const KktBlocks& kb) {
  const int dz = static_cast<int>(kb.D.rows());
  const int nz = static_cast<int>(kb.A.rows());
  const int d = kb.d;
  if (kb.A.cols() != dz || kb.B.rows() != dz || kb.B.cols() != d ||
      kb.C.rows() != nz || kb.C.cols() != d) {
    throw DimensionMismatch("inconsistent KKT block shapes");
  }
  Eigen::ColPivHouseholderQR<Mat> qr(kb.A);
  if (qr.rank() < nz) {
    throw RankDeficient("active constraint Jacobian lost row rank");
  }
  // One factorization of D serves both solves.
  Mat rhs(dz, nz + d);
  rhs.leftCols(nz) = kb.A.transpose();
  rhs.rightCols(d) = kb.B;
  const Mat X = numkit::solve_linear(kb.D, rhs);
  const Mat DiAt = X.leftCols(nz);  // D^{-1} A^T
  const Mat DiB = X.rightCols(d);   // D^{-1} B
  const Mat S = kb.A * DiAt;        // Schur complement A D^{-1} A^T
  const Mat Y = numkit::solve_linear(S, Mat(kb.A * DiB - kb.C));
  PolicyGradient out;
  out.dzeta = DiAt * Y - DiB;
  out.du0 = out.dzeta.middleRows(kb.n, kb.m);
  return out;
}

PolicyGradient grad_kkt(const models::Model& model, const Vec& theta,
                        const Vec& x_init, const ocp::PlanSolution& plan,
                        const ocp::ConstraintSpec& constraints) {
  return grad_kkt(build_kkt_blocks(model, theta, x_init, plan, constraints));
}

UnconstrainedGradient grad_unconstrained(const ocp::BoundProblem& pb,
                                         const Vec& x_init,
                                         const ocp::PlanSolution& plan) {
  if (!plan.active_set.empty()) {
    throw ActiveConstraintsPresent(
        "reduced route requires an empty active set");
  }
  const ocp::UnrolledDerivs ev =
      ocp::unrolled_derivs(pb, x_init, plan.u_flat(), true);
  UnconstrainedGradient out;
  out.du_seq = -numkit::solve_linear(ev.hess, ev.mixed);
  out.du0 = out.du_seq.topRows(pb.m);
  return out;
}

UnconstrainedGradient grad_unconstrained(const models::Model& model,
                                         const Vec& theta, const Vec& x_init,
                                         const ocp::PlanSolution& plan) {
  return grad_unconstrained(ocp::bind(model, theta), x_init, plan);
}

Mat fd_grad_resolve(const models::Model& model, const Vec& theta,
                    const Vec& x_init, const ocp::ConstraintSpec& constraints,
                    const ocp::SolverCfg& cfg, double h) {
  const int d = model.dim_theta();
  const int m = model.m();
  if (theta.size() != d) throw DimensionMismatch("theta size");
  const ocp::PlanSolution base =
      ocp::solve_plan(model, theta, x_init, constraints, cfg);
  ocp::SolverCfg warm = cfg;
  warm.warm_start = base.u_flat();
  Mat jac(m, d);
  for (int j = 0; j < d; ++j) {
    const double hj = numkit::fd_step(h, theta(j));
    Vec tp = theta, tm = theta;
    tp(j) += hj;
    tm(j) -= hj;
    const ocp::PlanSolution pp =
        ocp::solve_plan(model, tp, x_init, constraints, warm);
    const ocp::PlanSolution pm =
        ocp::solve_plan(model, tm, x_init, constraints, warm);
    jac.col(j) =
        (pp.actions.row(0) - pm.actions.row(0)).transpose() / (2.0 * hj);
  }
  return jac;
}

nlohmann::json GradReport::to_json() const {
  nlohmann::json j;
  j["routes"] = nlohmann::json::array();
  for (const auto& r : routes) {
    nlohmann::json rj;
    rj["name"] = r.name;
    rj["du0"] = jsonio::mat_to_json(r.du0);
    j["routes"].push_back(rj);
  }
  j["pairs"] = nlohmann::json::array();
  for (const auto& p : pairs) {
    nlohmann::json pj;
    pj["a"] = p.a;
    pj["b"] = p.b;
    pj["rel_err"] = p.rel_err;
    j["pairs"].push_back(pj);
  }
  j["warnings"] = warnings;
  j["worst_rel_err"] = worst_rel_err;
  j["reliable"] = reliable;
  return j;
}

GradReport crosscheck(const models::Model& model, const Vec& theta,
                      const Vec& x_init,
                      const ocp::ConstraintSpec& constraints,
                      const ocp::SolverCfg& cfg, bool with_fd) {
  GradReport rep;
  ocp::PlanSolution plan;
  try {
    plan = ocp::solve_plan(model, theta, x_init, constraints, cfg);
  } catch (const std::exception& e) {
    rep.warnings.push_back(std::string("plan solve failed: ") + e.what());
    rep.reliable = false;
    return rep;
  }
  if (!plan.converged) {
    rep.warnings.push_back(
        "plan did not converge; every gradient below is unreliable");
    rep.reliable = false;
  }
  if (plan.weakly_active) {
    rep.warnings.push_back(
        "weakly active constraint; the solution map may be one-sided here");
  }
  if (plan.nonconvex_detected) {
    rep.warnings.push_back(
        "nonconvex curvature encountered while solving the plan");
  }

  try {
    const PolicyGradient pg =
        grad_kkt(model, theta, x_init, plan, constraints);
    rep.routes.push_back({"kkt", pg.du0});
  } catch (const std::exception& e) {
    rep.warnings.push_back(std::string("kkt route failed: ") + e.what());
  }
  if (plan.active_set.empty()) {
    try {
      const UnconstrainedGradient ug =
          grad_unconstrained(model, theta, x_init, plan);
      rep.routes.push_back({"unconstrained", ug.du0});
    } catch (const std::exception& e) {
      rep.warnings.push_back(std::string("unconstrained route failed: ") +
                             e.what());
    }
  }
  if (with_fd) {
    try {
      ocp::SolverCfg fd_cfg = cfg;
      fd_cfg.warm_start = plan.u_flat();
      const Mat fd = fd_grad_resolve(model, theta, x_init, constraints,
                                     fd_cfg, 0.0);
      rep.routes.push_back({"fd_resolve", fd});
    } catch (const std::exception& e) {
      rep.warnings.push_back(std::string("fd route failed: ") + e.what());
    }
  }

  for (std::size_t i = 0; i < rep.routes.size(); ++i) {
    for (std::size_t j = i + 1; j < rep.routes.size(); ++j) {
      GradReport::Pair p;
      p.a = rep.routes[i].name;
      p.b = rep.routes[j].name;
      p.rel_err = numkit::rel_err(rep.routes[i].du0, rep.routes[j].du0);
      rep.pairs.push_back(p);
      if (p.rel_err > rep.worst_rel_err) rep.worst_rel_err = p.rel_err;
    }
  }
  return rep;
}

}  // namespace diffop::implicit
