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

#include "diffop/ocp.hpp"

#include <Eigen/Cholesky>
#include <Eigen/QR>
#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "diffop/errors.hpp"
#include "diffop/numkit.hpp"

namespace diffop::ocp {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Column of x_i / u_i inside zeta = (x_0, u_0, x_1, ..., x_H).
int xcol(int i, int n, int m) { return i * (n + m); }
int ucol(int i, int n, int m) { return i * (n + m) + n; }

// Global inequality index layout: per step the m lower-box slots, the m
// upper-box slots, then every general constraint output in declaration
// order; all terminal constraint outputs after the last step block.
struct IneqLayout {
  int m = 0;
  int H = 0;
  int gdim = 0;                // general outputs per step
  int per_step = 0;            // 2m + gdim
  int tdim = 0;                // terminal outputs
  std::vector<int> goff;       // offset of each general constraint in a step
  std::vector<int> toff;       // offset of each terminal constraint
  int total() const { return H * per_step + tdim; }
};

IneqLayout make_layout(const ConstraintSpec& cs, int H, int m) {
  IneqLayout lay;
  lay.m = m;
  lay.H = H;
  for (const auto& gc : cs.general) {
    lay.goff.push_back(lay.gdim);
    lay.gdim += gc.dim;
  }
  lay.per_step = 2 * m + lay.gdim;
  for (const auto& tc : cs.terminal) {
    lay.toff.push_back(lay.tdim);
    lay.tdim += tc.dim;
  }
  return lay;
}

struct Slot {
  enum Kind { kLower, kUpper, kGeneral, kTerminal } kind = kLower;
  int step = 0;   // 0..H-1; H for terminal slots
  int coord = 0;  // box coordinate
  int cons = 0;   // general/terminal constraint index
  int out = 0;    // output within that constraint
};

Slot decode_slot(const IneqLayout& lay, int gi) {
  if (gi < 0 || gi >= lay.total()) {
    throw DomainError("inequality index out of range");
  }
  Slot s;
  if (gi >= lay.H * lay.per_step) {
    s.kind = Slot::kTerminal;
    s.step = lay.H;
    int r = gi - lay.H * lay.per_step;
    for (int c = static_cast<int>(lay.toff.size()) - 1; c >= 0; --c) {
      if (r >= lay.toff[c]) {
        s.cons = c;
        s.out = r - lay.toff[c];
        break;
      }
    }
    return s;
  }
  s.step = gi / lay.per_step;
  int r = gi % lay.per_step;
  if (r < lay.m) {
    s.kind = Slot::kLower;
    s.coord = r;
  } else if (r < 2 * lay.m) {
    s.kind = Slot::kUpper;
    s.coord = r - lay.m;
  } else {
    s.kind = Slot::kGeneral;
    r -= 2 * lay.m;
    for (int c = static_cast<int>(lay.goff.size()) - 1; c >= 0; --c) {
      if (r >= lay.goff[c]) {
        s.cons = c;
        s.out = r - lay.goff[c];
        break;
      }
    }
  }
  return s;
}

Vec expand_bound(const Vec& b, int m, double absent) {
  if (b.size() == 0) return Vec::Constant(m, absent);
  return b;
}

Vec clamp_box(const Vec& u, const Vec& lo, const Vec& hi) {
  return u.cwiseMax(lo).cwiseMin(hi);
}

void check_plan_dims(const BoundProblem& pb, const Vec& x_init,
                     const Mat& states, const Mat& actions) {
  if (x_init.size() != pb.n) throw DimensionMismatch("x_init size");
  if (states.rows() != pb.H + 1 || states.cols() != pb.n) {
    throw DimensionMismatch("states shape");
  }
  if (actions.rows() != pb.H || actions.cols() != pb.m) {
    throw DimensionMismatch("actions shape");
  }
}

// Row layout of the stacked equality system z: the n initial-state pin rows,
// then per step the active inequality rows followed by the n defect rows,
// then the active terminal rows. Shared by every assembly routine so row
// order stays identical everywhere.
struct RowMap {
  std::vector<std::vector<int>> step_active;  // global ineq index per step
  std::vector<int> step_act_row;              // first active row of step i
  std::vector<int> defect_row;                // first defect row of step i
  std::vector<int> term_active;
  int term_act_row = 0;
  int n_z = 0;
};

RowMap build_row_map(const IneqLayout& lay, const std::vector<int>& active,
                     int n, int H) {
  RowMap rm;
  rm.step_active.assign(H, {});
  rm.step_act_row.assign(H, 0);
  rm.defect_row.assign(H, 0);
  int last = -1;
  for (int gi : active) {
    if (gi <= last) throw DomainError("active set not sorted or duplicated");
    last = gi;
    Slot s = decode_slot(lay, gi);
    if (s.kind == Slot::kTerminal) {
      rm.term_active.push_back(gi);
    } else {
      rm.step_active[s.step].push_back(gi);
    }
  }
  int r = n;  // pin rows occupy 0..n-1
  for (int i = 0; i < H; ++i) {
    rm.step_act_row[i] = r;
    r += static_cast<int>(rm.step_active[i].size());
    rm.defect_row[i] = r;
    r += n;
  }
  rm.term_act_row = r;
  r += static_cast<int>(rm.term_active.size());
  rm.n_z = r;
  return rm;
}

// Everything assemble_kkt_point and kkt_residual share: evaluations along
// the trajectory, grad_zeta, A, z, and the row map.
struct KktCore {
  std::vector<models::StageEval> se;
  std::vector<models::DynEval> de;
  models::TerminalEval te;
  IneqLayout lay;
  RowMap rm;
  Vec zeta;
  Vec grad_zeta;
  Mat A;
  Vec z;
  Vec ineq_values;
};

KktCore assemble_core(const BoundProblem& pb, const Vec& x_init,
                      const Mat& states, const Mat& actions,
                      const ConstraintSpec& constraints,
                      const std::vector<int>& active_set, bool with_theta) {
  check_plan_dims(pb, x_init, states, actions);
  constraints.validate(pb.m);
  const int n = pb.n, m = pb.m, H = pb.H;
  const int dz = (H + 1) * n + H * m;

  KktCore core;
  core.lay = make_layout(constraints, H, m);
  core.rm = build_row_map(core.lay, active_set, n, H);
  core.zeta = stack_zeta(states, actions);
  core.ineq_values = eval_inequalities(constraints, states, actions);

  core.se.reserve(H);
  core.de.reserve(H);
  for (int i = 0; i < H; ++i) {
    const Vec xi = states.row(i);
    const Vec ui = actions.row(i);
    core.se.push_back(pb.stage(xi, ui, with_theta));
    core.de.push_back(pb.dynamics(xi, ui, with_theta));
  }
  core.te = pb.terminal(states.row(H), with_theta);

  core.grad_zeta = Vec::Zero(dz);
  for (int i = 0; i < H; ++i) {
    core.grad_zeta.segment(xcol(i, n, m), n) = core.se[i].cx;
    core.grad_zeta.segment(ucol(i, n, m), m) = core.se[i].cu;
  }
  core.grad_zeta.segment(xcol(H, n, m), n) = core.te.cx;

  core.A = Mat::Zero(core.rm.n_z, dz);
  core.z = Vec::Zero(core.rm.n_z);
  for (int k = 0; k < n; ++k) {
    core.A(k, xcol(0, n, m) + k) = 1.0;
    core.z(k) = states(0, k) - x_init(k);
  }
  const Vec lo = expand_bound(constraints.u_lower, m, -kInf);
  const Vec hi = expand_bound(constraints.u_upper, m, kInf);
  for (int i = 0; i < H; ++i) {
    const Vec xi = states.row(i);
    const Vec ui = actions.row(i);
    int r = core.rm.step_act_row[i];
    for (int gi : core.rm.step_active[i]) {
      Slot s = decode_slot(core.lay, gi);
      // Active rows are oriented as z = -g so multipliers of binding
      // inequalities come out nonnegative under L = J - lambda^T z.
      if (s.kind == Slot::kLower) {
        if (!std::isfinite(lo(s.coord))) {
          throw DomainError("active set marks an absent lower bound");
        }
        core.A(r, ucol(i, n, m) + s.coord) = 1.0;
        core.z(r) = ui(s.coord) - lo(s.coord);
      } else if (s.kind == Slot::kUpper) {
        if (!std::isfinite(hi(s.coord))) {
          throw DomainError("active set marks an absent upper bound");
        }
        core.A(r, ucol(i, n, m) + s.coord) = -1.0;
        core.z(r) = hi(s.coord) - ui(s.coord);
      } else {
        const auto& gc = constraints.general[s.cons];
        const Vec gv = gc.g(xi, ui);
        const Mat jx = gc.jac_x(xi, ui);
        const Mat ju = gc.jac_u(xi, ui);
        if (gv.size() != gc.dim || jx.rows() != gc.dim || jx.cols() != n ||
            ju.rows() != gc.dim || ju.cols() != m) {
          throw DimensionMismatch("general constraint output shape");
        }
        core.A.block(r, xcol(i, n, m), 1, n) = -jx.row(s.out);
        core.A.block(r, ucol(i, n, m), 1, m) = -ju.row(s.out);
        core.z(r) = -gv(s.out);
      }
      ++r;
    }
    int dr = core.rm.defect_row[i];
    core.A.block(dr, xcol(i + 1, n, m), n, n) = Mat::Identity(n, n);
    core.A.block(dr, xcol(i, n, m), n, n) = -core.de[i].fx;
    core.A.block(dr, ucol(i, n, m), n, m) = -core.de[i].fu;
    core.z.segment(dr, n) =
        states.row(i + 1).transpose() - core.de[i].x_next;
  }
  {
    const Vec xH = states.row(H);
    int r = core.rm.term_act_row;
    for (int gi : core.rm.term_active) {
      Slot s = decode_slot(core.lay, gi);
      const auto& tc = constraints.terminal[s.cons];
      const Vec gv = tc.g(xH);
      const Mat j = tc.jac(xH);
      if (gv.size() != tc.dim || j.rows() != tc.dim || j.cols() != n) {
        throw DimensionMismatch("terminal constraint output shape");
      }
      core.A.block(r, xcol(H, n, m), 1, n) = -j.row(s.out);
      core.z(r) = -gv(s.out);
      ++r;
    }
  }
  return core;
}

double feasibility_norm(const KktCore& core,
                        const std::vector<int>& active_set) {
  double feas = core.z.size() > 0 ? core.z.cwiseAbs().maxCoeff() : 0.0;
  std::size_t a = 0;
  for (int gi = 0; gi < core.ineq_values.size(); ++gi) {
    if (a < active_set.size() && active_set[a] == gi) {
      ++a;
      continue;
    }
    const double v = core.ineq_values(gi);
    if (std::isfinite(v) && v > feas) feas = v;
  }
  return feas;
}

double stationarity_norm(const KktCore& core, const Vec& lambda) {
  const Vec r = core.grad_zeta - core.A.transpose() * lambda;
  return r.size() > 0 ? r.cwiseAbs().maxCoeff() : 0.0;
}

// Any binding inequality with a vanishing multiplier makes the active set
// ambiguous, so flag it for downstream differentiation.
bool any_weakly_active(const KktCore& core, const Vec& lambda) {
  constexpr double kWeakTol = 1e-6;
  for (std::size_t i = 0; i < core.rm.step_active.size(); ++i) {
    int r = core.rm.step_act_row[i];
    for (std::size_t k = 0; k < core.rm.step_active[i].size(); ++k) {
      if (std::abs(lambda(r + static_cast<int>(k))) < kWeakTol) return true;
    }
  }
  for (std::size_t k = 0; k < core.rm.term_active.size(); ++k) {
    if (std::abs(lambda(core.rm.term_act_row + static_cast<int>(k))) <
        kWeakTol) {
      return true;
    }
  }
  return false;
}

Mat reshape_actions(const Vec& u_seq, int H, int m) {
  Mat actions(H, m);
  for (int i = 0; i < H; ++i) {
    actions.row(i) = u_seq.segment(i * m, m);
  }
  return actions;
}

}  // namespace

void ConstraintSpec::validate(int m) const {
  if (u_lower.size() != 0 && u_lower.size() != m) {
    throw DimensionMismatch("u_lower must be empty or length m");
  }
  if (u_upper.size() != 0 && u_upper.size() != m) {
    throw DimensionMismatch("u_upper must be empty or length m");
  }
  if (u_lower.size() == m && u_upper.size() == m) {
    for (int j = 0; j < m; ++j) {
      if (std::isfinite(u_lower(j)) && std::isfinite(u_upper(j)) &&
          u_lower(j) > u_upper(j)) {
        throw ConfigError("box lower bound exceeds upper bound");
      }
    }
  }
  for (const auto& gc : general) {
    if (gc.dim <= 0) throw ConfigError("general constraint dim must be > 0");
    if (!gc.g || !gc.jac_x || !gc.jac_u) {
      throw ConfigError("general constraint requires g, jac_x, jac_u");
    }
  }
  for (const auto& tc : terminal) {
    if (tc.dim <= 0) throw ConfigError("terminal constraint dim must be > 0");
    if (!tc.g || !tc.jac) {
      throw ConfigError("terminal constraint requires g and jac");
    }
  }
}

Vec PlanSolution::u_flat() const {
  const int H = static_cast<int>(actions.rows());
  const int m = static_cast<int>(actions.cols());
  Vec u(H * m);
  for (int i = 0; i < H; ++i) u.segment(i * m, m) = actions.row(i);
  return u;
}

BoundProblem bind(const models::Model& model, const Vec& theta) {
  const models::PolicyParams pp = model.unpack(theta);
  const Vec thc = pp.theta_c, thH = pp.theta_H, thf = pp.theta_f;
  BoundProblem pb;
  pb.n = model.n();
  pb.m = model.m();
  pb.H = model.horizon();
  pb.d = model.dim_theta();
  const int d = pb.d;
  const int dc = model.dim_theta_c();
  const int dH = model.dim_theta_H();
  const int df = model.dim_theta_f();
  const int oH = dc;
  const int of = dc + dH;
  const models::Model* mp = &model;

  pb.stage = [mp, thc, d, dc](const Vec& x, const Vec& u, bool wt) {
    models::StageEval se = mp->stage_cost_derivs(thc, x, u);
    if (wt) {
      Mat full = Mat::Zero(x.size() + u.size(), d);
      full.leftCols(dc) = se.cth;
      se.cth = std::move(full);
    }
    return se;
  };
  pb.stage_value = [mp, thc](const Vec& x, const Vec& u) {
    return mp->stage_cost(thc, x, u);
  };
  pb.terminal = [mp, thH, d, dH, oH](const Vec& x, bool wt) {
    models::TerminalEval te = mp->terminal_cost_derivs(thH, x);
    if (wt) {
      Mat full = Mat::Zero(x.size(), d);
      full.middleCols(oH, dH) = te.cth;
      te.cth = std::move(full);
    }
    return te;
  };
  pb.terminal_value = [mp, thH](const Vec& x) {
    return mp->terminal_cost(thH, x);
  };
  pb.dynamics = [mp, thf, d, df, of](const Vec& x, const Vec& u, bool wt) {
    models::DynEval de = mp->dynamics_derivs(thf, x, u);
    if (wt) {
      const int n = static_cast<int>(x.size());
      const int nm = n + static_cast<int>(u.size());
      Mat full = Mat::Zero(n, d);
      full.middleCols(of, df) = de.fth;
      de.fth = std::move(full);
      for (int k = 0; k < n; ++k) {
        Mat fv = Mat::Zero(nm, d);
        fv.middleCols(of, df) = de.fthv[k];
        de.fthv[k] = std::move(fv);
      }
    }
    return de;
  };
  pb.dynamics_value = [mp, thf](const Vec& x, const Vec& u) {
    return mp->dynamics_step(thf, x, u);
  };
  return pb;
}

double unrolled_cost(const BoundProblem& pb, const Vec& x_init,
                     const Vec& u_seq) {
  if (x_init.size() != pb.n) throw DimensionMismatch("x_init size");
  if (u_seq.size() != pb.H * pb.m) throw DimensionMismatch("u_seq size");
  Vec x = x_init;
  double total = 0.0;
  for (int i = 0; i < pb.H; ++i) {
    const Vec u = u_seq.segment(i * pb.m, pb.m);
    total += pb.stage_value(x, u);
    x = pb.dynamics_value(x, u);
    if (!all_finite(x)) throw NonFiniteEvaluation("state rollout");
  }
  total += pb.terminal_value(x);
  if (!std::isfinite(total)) throw NonFiniteEvaluation("unrolled cost");
  return total;
}

double unrolled_cost(const models::Model& model, const Vec& theta,
                     const Vec& x_init, const Vec& u_seq) {
  return unrolled_cost(bind(model, theta), x_init, u_seq);
}

UnrolledDerivs unrolled_derivs(const BoundProblem& pb, const Vec& x_init,
                               const Vec& u_seq, bool with_theta) {
  if (x_init.size() != pb.n) throw DimensionMismatch("x_init size");
  if (u_seq.size() != pb.H * pb.m) throw DimensionMismatch("u_seq size");
  const int n = pb.n, m = pb.m, H = pb.H;
  const int d = with_theta ? pb.d : 0;

  UnrolledDerivs out;
  out.states = Mat::Zero(H + 1, n);
  out.states.row(0) = x_init;

  std::vector<models::StageEval> se;
  std::vector<models::DynEval> de;
  se.reserve(H);
  de.reserve(H);
  out.cost = 0.0;
  for (int i = 0; i < H; ++i) {
    const Vec xi = out.states.row(i);
    const Vec ui = u_seq.segment(i * m, m);
    se.push_back(pb.stage(xi, ui, with_theta));
    de.push_back(pb.dynamics(xi, ui, with_theta));
    out.states.row(i + 1) = de[i].x_next;
    out.cost += se[i].c;
  }
  const models::TerminalEval te = pb.terminal(out.states.row(H), with_theta);
  out.cost += te.c;
  if (!std::isfinite(out.cost)) throw NonFiniteEvaluation("unrolled cost");

  // Adjoint pass: p_i = dJ/dx_i holding the action sequence fixed.
  std::vector<Vec> p(H + 1);
  p[H] = te.cx;
  for (int i = H - 1; i >= 0; --i) {
    p[i] = se[i].cx + de[i].fx.transpose() * p[i + 1];
  }
  out.grad = Vec::Zero(H * m);
  for (int a = 0; a < H; ++a) {
    out.grad.segment(a * m, m) = se[a].cu + de[a].fu.transpose() * p[a + 1];
  }
  if (!all_finite(out.grad)) throw NonFiniteEvaluation("unrolled gradient");

  // Curvature along the trajectory: stage Hessian plus the adjoint-weighted
  // dynamics curvature.
  std::vector<Mat> S(H), Q(H);
  for (int i = 0; i < H; ++i) {
    S[i] = Mat::Zero(n + m, n + m);
    for (int k = 0; k < n; ++k) S[i] += p[i + 1](k) * de[i].fvv[k];
    Q[i] = Mat::Zero(n + m, n + m);
    Q[i].topLeftCorner(n, n) = se[i].cxx;
    Q[i].topRightCorner(n, m) = se[i].cxu;
    Q[i].bottomLeftCorner(m, n) = se[i].cxu.transpose();
    Q[i].bottomRightCorner(m, m) = se[i].cuu;
    Q[i] += S[i];
  }

  // State sensitivities T[a][i] = dx_i/du_a with later actions fixed.
  std::vector<std::vector<Mat>> T(H);
  for (int a = 0; a < H; ++a) {
    T[a].assign(H + 1, Mat());
    T[a][a + 1] = de[a].fu;
    for (int i = a + 1; i < H; ++i) T[a][i + 1] = de[i].fx * T[a][i];
  }

  out.hess = Mat::Zero(H * m, H * m);
  for (int a = 0; a < H; ++a) {
    for (int b = a; b < H; ++b) {
      Mat acc = Mat::Zero(m, m);
      for (int i = b; i < H; ++i) {
        Mat da = Mat::Zero(n + m, m);
        if (i == a) {
          da.bottomRows(m) = Mat::Identity(m, m);
        } else {
          da.topRows(n) = T[a][i];
        }
        Mat db = Mat::Zero(n + m, m);
        if (i == b) {
          db.bottomRows(m) = Mat::Identity(m, m);
        } else {
          db.topRows(n) = T[b][i];
        }
        acc += da.transpose() * Q[i] * db;
      }
      acc += T[a][H].transpose() * te.cxx * T[b][H];
      out.hess.block(a * m, b * m, m, m) = acc;
      if (b > a) {
        out.hess.block(b * m, a * m, m, m) = acc.transpose();
      }
    }
  }
  if (!all_finite(out.hess)) throw NonFiniteEvaluation("unrolled hessian");

  if (with_theta) {
    // Forward parameter sensitivities of the states, then a backward pass
    // for P_i = d(p_i)/dtheta along the fixed action sequence.
    std::vector<Mat> V(H + 1), Z(H), P(H + 1);
    V[0] = Mat::Zero(n, d);
    for (int i = 0; i < H; ++i) {
      V[i + 1] = de[i].fx * V[i] + de[i].fth;
      Z[i] = Mat::Zero(n + m, d);
      for (int k = 0; k < n; ++k) Z[i] += p[i + 1](k) * de[i].fthv[k];
    }
    P[H] = te.cxx * V[H] + te.cth;
    for (int i = H - 1; i >= 0; --i) {
      P[i] = se[i].cxx * V[i] + se[i].cth.topRows(n) +
             S[i].topLeftCorner(n, n) * V[i] + Z[i].topRows(n) +
             de[i].fx.transpose() * P[i + 1];
    }
    out.mixed = Mat::Zero(H * m, d);
    for (int a = 0; a < H; ++a) {
      out.mixed.block(a * m, 0, m, d) =
          se[a].cxu.transpose() * V[a] + se[a].cth.bottomRows(m) +
          S[a].bottomLeftCorner(m, n) * V[a] + Z[a].bottomRows(m) +
          de[a].fu.transpose() * P[a + 1];
    }
    if (!all_finite(out.mixed)) {
      throw NonFiniteEvaluation("unrolled mixed block");
    }
  }
  return out;
}

UnrolledDerivs unrolled_derivs(const models::Model& model, const Vec& theta,
                               const Vec& x_init, const Vec& u_seq,
                               bool with_theta) {
  return unrolled_derivs(bind(model, theta), x_init, u_seq, with_theta);
}

PlanSolution solve_plan(const BoundProblem& pb, const Vec& x_init,
                        const ConstraintSpec& constraints,
                        const SolverCfg& cfg) {
  constraints.validate(pb.m);
  if (x_init.size() != pb.n) throw DimensionMismatch("x_init size");
  const int m = pb.m, H = pb.H;
  const int dim = H * m;
  const Vec lo = expand_bound(constraints.u_lower, m, -kInf)
                     .replicate(H, 1);
  const Vec hi = expand_bound(constraints.u_upper, m, kInf)
                     .replicate(H, 1);

  Vec u = cfg.warm_start.size() == dim ? cfg.warm_start : Vec::Zero(dim);
  u = clamp_box(u, lo, hi);

  UnrolledDerivs ev = unrolled_derivs(pb, x_init, u, false);
  int it = 0;
  bool converged = false;
  bool nonconvex = false;
  while (true) {
    const Vec pg = u - clamp_box(u - ev.grad, lo, hi);
    if (pg.cwiseAbs().maxCoeff() <= cfg.grad_tol) {
      converged = true;
      break;
    }
    if (it >= cfg.max_iters) break;

    // Freeze coordinates pinned at a bound with the gradient pushing
    // further out; Newton acts on the free block only.
    std::vector<int> free_idx;
    free_idx.reserve(dim);
    for (int j = 0; j < dim; ++j) {
      const bool at_lo = u(j) <= lo(j) && ev.grad(j) > 0.0;
      const bool at_hi = u(j) >= hi(j) && ev.grad(j) < 0.0;
      if (!at_lo && !at_hi) free_idx.push_back(j);
    }
    Vec dir = Vec::Zero(dim);
    bool newton_dir = false;
    if (!free_idx.empty()) {
      const int nf = static_cast<int>(free_idx.size());
      Mat hf(nf, nf);
      Vec gf(nf);
      for (int a = 0; a < nf; ++a) {
        gf(a) = ev.grad(free_idx[a]);
        for (int b = 0; b < nf; ++b) {
          hf(a, b) = ev.hess(free_idx[a], free_idx[b]);
        }
      }
      Eigen::LLT<Mat> llt(hf);
      Vec df;
      if (llt.info() == Eigen::Success) {
        df = -llt.solve(gf);
        newton_dir = true;
      } else {
        nonconvex = true;
        df = -gf;
      }
      for (int a = 0; a < nf; ++a) dir(free_idx[a]) = df(a);
    }

    // Backtracking on the projected path with an Armijo decrease test.
    bool accepted = false;
    Vec u_next;
    double cost_next = 0.0;
    for (int pass = 0; pass < 2 && !accepted; ++pass) {
      if (pass == 1) {
        if (!newton_dir) break;  // already tried the gradient direction
        dir = Vec::Zero(dim);
        for (int j : free_idx) dir(j) = -ev.grad(j);
      }
      double t = 1.0;
      for (int ls = 0; ls < 60; ++ls) {
        const Vec u_try = clamp_box(u + t * dir, lo, hi);
        const Vec step = u_try - u;
        if (step.cwiseAbs().maxCoeff() == 0.0) break;
        const double J_try = unrolled_cost(pb, x_init, u_try);
        if (J_try <= ev.cost + cfg.armijo_c * ev.grad.dot(step)) {
          accepted = true;
          u_next = u_try;
          cost_next = J_try;
          break;
        }
        t *= 0.5;
      }
    }
    if (!accepted) break;  // numerical floor; report the best iterate
    u = u_next;
    (void)cost_next;
    ev = unrolled_derivs(pb, x_init, u, false);
    ++it;
  }

  PlanSolution plan;
  plan.states = ev.states;
  plan.actions = reshape_actions(u, H, m);
  plan.cost = ev.cost;
  plan.iterations = it;
  plan.converged = converged;
  plan.nonconvex_detected = nonconvex;
  plan.active_set =
      detect_active_set(constraints, plan.states, plan.actions);
  KktCore core = assemble_core(pb, x_init, plan.states, plan.actions,
                               constraints, plan.active_set, false);
  Eigen::ColPivHouseholderQR<Mat> qr(core.A.transpose());
  plan.multipliers = qr.solve(core.grad_zeta);
  plan.kkt_residual = std::max(stationarity_norm(core, plan.multipliers),
                               feasibility_norm(core, plan.active_set));
  plan.weakly_active = any_weakly_active(core, plan.multipliers);
  return plan;
}

PlanSolution solve_plan(const models::Model& model, const Vec& theta,
                        const Vec& x_init, const ConstraintSpec& constraints,
                        const SolverCfg& cfg) {
  return solve_plan(bind(model, theta), x_init, constraints, cfg);
}

double kkt_residual(const BoundProblem& pb, const Vec& x_init,
                    const PlanSolution& plan,
                    const ConstraintSpec& constraints) {
  KktCore core = assemble_core(pb, x_init, plan.states, plan.actions,
                               constraints, plan.active_set, false);
  if (plan.multipliers.size() != core.rm.n_z) {
    throw DimensionMismatch("multiplier vector does not match the plan");
  }
  return std::max(stationarity_norm(core, plan.multipliers),
                  feasibility_norm(core, plan.active_set));
}

double kkt_residual(const models::Model& model, const Vec& theta,
                    const Vec& x_init, const PlanSolution& plan,
                    const ConstraintSpec& constraints) {
  return kkt_residual(bind(model, theta), x_init, plan, constraints);
}

int num_inequalities(const ConstraintSpec& constraints, int H, int m) {
  return make_layout(constraints, H, m).total();
}

Vec eval_inequalities(const ConstraintSpec& constraints, const Mat& states,
                      const Mat& actions) {
  const int H = static_cast<int>(actions.rows());
  const int m = static_cast<int>(actions.cols());
  constraints.validate(m);
  const IneqLayout lay = make_layout(constraints, H, m);
  const Vec lo = expand_bound(constraints.u_lower, m, -kInf);
  const Vec hi = expand_bound(constraints.u_upper, m, kInf);
  Vec vals = Vec::Constant(lay.total(), -kInf);
  for (int i = 0; i < H; ++i) {
    const Vec xi = states.row(i);
    const Vec ui = actions.row(i);
    const int base = i * lay.per_step;
    for (int j = 0; j < m; ++j) {
      if (std::isfinite(lo(j))) vals(base + j) = lo(j) - ui(j);
      if (std::isfinite(hi(j))) vals(base + m + j) = ui(j) - hi(j);
    }
    int off = base + 2 * m;
    for (const auto& gc : constraints.general) {
      const Vec gv = gc.g(xi, ui);
      if (gv.size() != gc.dim) {
        throw DimensionMismatch("general constraint output size");
      }
      vals.segment(off, gc.dim) = gv;
      off += gc.dim;
    }
  }
  {
    const Vec xH = states.row(H);
    int off = H * lay.per_step;
    for (const auto& tc : constraints.terminal) {
      const Vec gv = tc.g(xH);
      if (gv.size() != tc.dim) {
        throw DimensionMismatch("terminal constraint output size");
      }
      vals.segment(off, tc.dim) = gv;
      off += tc.dim;
    }
  }
  return vals;
}

std::vector<int> detect_active_set(const ConstraintSpec& constraints,
                                   const Mat& states, const Mat& actions,
                                   double tol) {
  const Vec vals = eval_inequalities(constraints, states, actions);
  std::vector<int> active;
  for (int gi = 0; gi < vals.size(); ++gi) {
    if (std::isfinite(vals(gi)) && vals(gi) >= -tol) active.push_back(gi);
  }
  return active;
}

Vec stack_zeta(const Mat& states, const Mat& actions) {
  const int H = static_cast<int>(actions.rows());
  const int n = static_cast<int>(states.cols());
  const int m = static_cast<int>(actions.cols());
  if (states.rows() != H + 1) throw DimensionMismatch("states shape");
  Vec zeta((H + 1) * n + H * m);
  for (int i = 0; i < H; ++i) {
    zeta.segment(xcol(i, n, m), n) = states.row(i);
    zeta.segment(ucol(i, n, m), m) = actions.row(i);
  }
  zeta.segment(xcol(H, n, m), n) = states.row(H);
  return zeta;
}

KktPoint assemble_kkt_point(const BoundProblem& pb, const Vec& x_init,
                            const Mat& states, const Mat& actions,
                            const ConstraintSpec& constraints,
                            const std::vector<int>& active_set) {
  KktCore core = assemble_core(pb, x_init, states, actions, constraints,
                               active_set, false);
  KktPoint kp;
  kp.zeta = core.zeta;
  kp.grad_zeta = core.grad_zeta;
  kp.A = core.A;
  kp.z = core.z;
  kp.active = active_set;
  Eigen::ColPivHouseholderQR<Mat> qr(core.A.transpose());
  kp.lambda = qr.solve(core.grad_zeta);
  kp.stationarity = stationarity_norm(core, kp.lambda);
  kp.feasibility = feasibility_norm(core, active_set);
  return kp;
}

KktDerivativeBlocks lagrangian_blocks(const BoundProblem& pb,
                                      const Vec& x_init, const Mat& states,
                                      const Mat& actions,
                                      const ConstraintSpec& constraints,
                                      const std::vector<int>& active_set,
                                      const Vec& lambda, bool with_theta) {
  KktCore core = assemble_core(pb, x_init, states, actions, constraints,
                               active_set, with_theta);
  if (lambda.size() != core.rm.n_z) {
    throw DimensionMismatch("multiplier vector does not match the plan");
  }
  const int n = pb.n, m = pb.m, H = pb.H;
  const int dz = (H + 1) * n + H * m;
  const int d = with_theta ? pb.d : 0;

  KktDerivativeBlocks out;
  out.D = Mat::Zero(dz, dz);
  out.B = Mat::Zero(dz, d);
  out.C = Mat::Zero(core.rm.n_z, d);

  for (int i = 0; i < H; ++i) {
    const int xc = xcol(i, n, m);
    auto blk = out.D.block(xc, xc, n + m, n + m);
    blk.topLeftCorner(n, n) += core.se[i].cxx;
    blk.topRightCorner(n, m) += core.se[i].cxu;
    blk.bottomLeftCorner(m, n) += core.se[i].cxu.transpose();
    blk.bottomRightCorner(m, m) += core.se[i].cuu;
    if (with_theta) {
      out.B.middleRows(xc, n + m) += core.se[i].cth;
    }
  }
  out.D.block(xcol(H, n, m), xcol(H, n, m), n, n) += core.te.cxx;
  if (with_theta) {
    out.B.middleRows(xcol(H, n, m), n) += core.te.cth;
  }

  // Constraint curvature and parameter coupling. Defect rows carry the
  // dynamics second derivatives; pin and box rows are linear; active rows
  // use the recorded z = -g orientation.
  for (int i = 0; i < H; ++i) {
    const int xc = xcol(i, n, m);
    const int dr = core.rm.defect_row[i];
    for (int k = 0; k < n; ++k) {
      const double lam = lambda(dr + k);
      out.D.block(xc, xc, n + m, n + m) += lam * core.de[i].fvv[k];
      if (with_theta) {
        out.B.middleRows(xc, n + m) += lam * core.de[i].fthv[k];
      }
    }
    if (with_theta) {
      out.C.middleRows(dr, n) = -core.de[i].fth;
    }
    int r = core.rm.step_act_row[i];
    for (int gi : core.rm.step_active[i]) {
      Slot s = decode_slot(core.lay, gi);
      if (s.kind == Slot::kGeneral) {
        const auto& gc = constraints.general[s.cons];
        if (gc.hess) {
          const Vec xi = states.row(i);
          const Vec ui = actions.row(i);
          const std::vector<Mat> hs = gc.hess(xi, ui);
          if (static_cast<int>(hs.size()) != gc.dim) {
            throw DimensionMismatch("general constraint hessian count");
          }
          out.D.block(xc, xc, n + m, n + m) += lambda(r) * hs[s.out];
        }
      }
      ++r;
    }
  }
  {
    int r = core.rm.term_act_row;
    const int xc = xcol(H, n, m);
    for (int gi : core.rm.term_active) {
      Slot s = decode_slot(core.lay, gi);
      const auto& tc = constraints.terminal[s.cons];
      if (tc.hess) {
        const std::vector<Mat> hs = tc.hess(states.row(H));
        if (static_cast<int>(hs.size()) != tc.dim) {
          throw DimensionMismatch("terminal constraint hessian count");
        }
        out.D.block(xc, xc, n, n) += lambda(r) * hs[s.out];
      }
      ++r;
    }
  }
  return out;
}

PlanSolution refine_plan_fixed_active(const BoundProblem& pb,
                                      const Vec& x_init,
                                      const ConstraintSpec& constraints,
                                      const std::vector<int>& active_set,
                                      const PlanSolution& init, double tol,
                                      int max_iters) {
  const int n = pb.n, m = pb.m, H = pb.H;
  const int dz = (H + 1) * n + H * m;
  Mat states = init.states;
  Mat actions = init.actions;

  KktCore core = assemble_core(pb, x_init, states, actions, constraints,
                               active_set, false);
  Vec lambda;
  if (init.multipliers.size() == core.rm.n_z) {
    lambda = init.multipliers;
  } else {
    Eigen::ColPivHouseholderQR<Mat> qr(core.A.transpose());
    lambda = qr.solve(core.grad_zeta);
  }

  int it = 0;
  bool converged = false;
  while (true) {
    const double resid =
        std::max(stationarity_norm(core, lambda),
                 core.z.size() > 0 ? core.z.cwiseAbs().maxCoeff() : 0.0);
    if (resid <= tol) {
      converged = true;
      break;
    }
    if (it >= max_iters) break;

    const KktDerivativeBlocks kb = lagrangian_blocks(
        pb, x_init, states, actions, constraints, active_set, lambda, false);
    const int nz = core.rm.n_z;
    Mat kkt = Mat::Zero(dz + nz, dz + nz);
    kkt.topLeftCorner(dz, dz) = kb.D;
    kkt.topRightCorner(dz, nz) = -core.A.transpose();
    kkt.bottomLeftCorner(nz, dz) = core.A;
    Vec rhs(dz + nz);
    rhs.head(dz) = -(core.grad_zeta - core.A.transpose() * lambda);
    rhs.tail(nz) = -core.z;
    const Vec delta = numkit::solve_linear(kkt, rhs);

    Vec zeta = core.zeta + delta.head(dz);
    lambda += delta.tail(nz);
    for (int i = 0; i < H; ++i) {
      states.row(i) = zeta.segment(xcol(i, n, m), n);
      actions.row(i) = zeta.segment(ucol(i, n, m), m);
    }
    states.row(H) = zeta.segment(xcol(H, n, m), n);
    core = assemble_core(pb, x_init, states, actions, constraints,
                         active_set, false);
    ++it;
  }

  PlanSolution plan;
  plan.states = states;
  plan.actions = actions;
  plan.multipliers = lambda;
  plan.active_set = active_set;
  double cost = 0.0;
  for (int i = 0; i < H; ++i) {
    cost += pb.stage_value(states.row(i), actions.row(i));
  }
  cost += pb.terminal_value(states.row(H));
  plan.cost = cost;
  plan.iterations = it;
  plan.converged = converged;
  plan.kkt_residual = std::max(stationarity_norm(core, lambda),
                               feasibility_norm(core, active_set));
  plan.weakly_active = any_weakly_active(core, lambda);
  return plan;
}

}  // namespace diffop::ocp
