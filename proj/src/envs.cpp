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

#include "diffop/envs.hpp"

#include <cmath>
#include <utility>

#include "diffop/errors.hpp"
#include "diffop/jsonio.hpp"
#include "diffop/numkit.hpp"

namespace diffop::envs {

namespace {

void check_state(const EnvState& s, int n) {
  if (s.x.size() != n) throw DimensionMismatch("state size");
  if (!all_finite(s.x)) throw NonFiniteEvaluation("environment state");
}

Vec finite_or_throw(Vec x, const char* what) {
  if (!all_finite(x)) throw NonFiniteEvaluation(what);
  return x;
}

// Continuous-time right-hand sides. Kept separate from the Euler wrappers so
// the step functions are literal transcriptions of x + dt * f(x, u).

Vec cartpole_rhs(const Vec& x, double F, const EnvSpec& sp) {
  const double mc = sp.p("mc"), mp = sp.p("mp"), l = sp.p("l"),
               g = sp.p("g");
  const double phi = x(1), yd = x(2), phid = x(3);
  const double sphi = std::sin(phi), cphi = std::cos(phi);
  const double denom = mc + mp * sphi * sphi;
  Vec dx(4);
  dx(0) = yd;
  dx(1) = phid;
  dx(2) = (F + mp * sphi * (l * phid * phid + g * cphi)) / denom;
  dx(3) = (-F * cphi - mp * l * phid * phid * sphi * cphi -
           (mc + mp) * g * sphi) /
          (l * denom);
  return dx;
}

// Standard two-link arm terms with rod links, centers of mass at the link
// midpoints, and angles from the downward vertical.
struct ArmTerms {
  Mat M;
  Vec coriolis;  // C(q, qd) * qd
  Vec gravity;
};

ArmTerms arm_terms(const Vec& x, const EnvSpec& sp) {
  const double m1 = sp.p("m1"), m2 = sp.p("m2"), l1 = sp.p("l1"),
               l2 = sp.p("l2"), g = sp.p("g");
  const double lc1 = 0.5 * l1, lc2 = 0.5 * l2;
  const double i1 = m1 * l1 * l1 / 12.0, i2 = m2 * l2 * l2 / 12.0;
  const double q1 = x(0), q2 = x(1), qd1 = x(2), qd2 = x(3);
  const double c2 = std::cos(q2);
  ArmTerms t;
  t.M = Mat(2, 2);
  t.M(0, 0) = m1 * lc1 * lc1 + i1 +
              m2 * (l1 * l1 + lc2 * lc2 + 2.0 * l1 * lc2 * c2) + i2;
  t.M(0, 1) = m2 * (lc2 * lc2 + l1 * lc2 * c2) + i2;
  t.M(1, 0) = t.M(0, 1);
  t.M(1, 1) = m2 * lc2 * lc2 + i2;
  const double h = -m2 * l1 * lc2 * std::sin(q2);
  t.coriolis = Vec(2);
  t.coriolis(0) = h * (2.0 * qd1 * qd2 + qd2 * qd2);
  t.coriolis(1) = -h * qd1 * qd1;
  t.gravity = Vec(2);
  t.gravity(0) = (m1 * lc1 + m2 * l1) * g * std::sin(q1) +
                 m2 * lc2 * g * std::sin(q1 + q2);
  t.gravity(1) = m2 * lc2 * g * std::sin(q1 + q2);
  return t;
}

Vec robotarm_rhs(const Vec& x, const Vec& u, const EnvSpec& sp) {
  const ArmTerms t = arm_terms(x, sp);
  const Vec qdd = numkit::solve_linear(t.M, Vec(u - t.coriolis - t.gravity));
  Vec dx(4);
  dx(0) = x(2);
  dx(1) = x(3);
  dx(2) = qdd(0);
  dx(3) = qdd(1);
  return dx;
}

Mat dcm(const Vec& q) {
  const double q0 = q(0), q1 = q(1), q2 = q(2), q3 = q(3);
  Mat R(3, 3);
  R(0, 0) = 1.0 - 2.0 * (q2 * q2 + q3 * q3);
  R(0, 1) = 2.0 * (q1 * q2 - q0 * q3);
  R(0, 2) = 2.0 * (q1 * q3 + q0 * q2);
  R(1, 0) = 2.0 * (q1 * q2 + q0 * q3);
  R(1, 1) = 1.0 - 2.0 * (q1 * q1 + q3 * q3);
  R(1, 2) = 2.0 * (q2 * q3 - q0 * q1);
  R(2, 0) = 2.0 * (q1 * q3 - q0 * q2);
  R(2, 1) = 2.0 * (q2 * q3 + q0 * q1);
  R(2, 2) = 1.0 - 2.0 * (q1 * q1 + q2 * q2);
  return R;
}

Mat omega(const Vec& w) {
  Mat O = Mat::Zero(4, 4);
  const double wx = w(0), wy = w(1), wz = w(2);
  O(0, 1) = -wx;
  O(0, 2) = -wy;
  O(0, 3) = -wz;
  O(1, 0) = wx;
  O(1, 2) = wz;
  O(1, 3) = -wy;
  O(2, 0) = wy;
  O(2, 1) = -wz;
  O(2, 3) = wx;
  O(3, 0) = wz;
  O(3, 1) = wy;
  O(3, 2) = -wx;
  return O;
}

Vec quadrotor_rhs(const Vec& x, const Vec& thrusts, const EnvSpec& sp) {
  const double mass = sp.p("mass"), lw = sp.p("lw"), c = sp.p("c"),
               g = sp.p("g");
  const Vec jdiag =
      (Vec(3) << sp.p("Jx"), sp.p("Jy"), sp.p("Jz")).finished();
  // Thrust-to-wrench mixing: total force magnitude along body z plus the
  // three body torques.
  Mat mix(4, 4);
  mix << 1.0, 1.0, 1.0, 1.0,                      //
      0.0, -lw / 2.0, 0.0, lw / 2.0,              //
      -lw / 2.0, 0.0, lw / 2.0, 0.0,              //
      c, -c, c, -c;
  const Vec wrench = mix * thrusts;
  const Vec v = x.segment(3, 3);
  const Vec q = x.segment(6, 4);
  const Vec w = x.segment(10, 3);
  const Vec fw = dcm(q).col(2) * wrench(0);  // body-z thrust in world frame
  const Vec torque = wrench.tail(3);
  Vec dx(13);
  dx.segment(0, 3) = v;
  dx.segment(3, 3) = Vec((Vec(3) << 0.0, 0.0, -g).finished() + fw / mass);
  dx.segment(6, 4) = 0.5 * omega(w) * q;
  const Vec jw = jdiag.cwiseProduct(w);
  Vec wxjw(3);
  wxjw << w(1) * jw(2) - w(2) * jw(1), w(2) * jw(0) - w(0) * jw(2),
      w(0) * jw(1) - w(1) * jw(0);
  dx.segment(10, 3) = (torque - wxjw).cwiseQuotient(jdiag);
  return dx;
}

double cartpole_cost(const Vec& x, const Vec& u, const EnvSpec& sp) {
  const Vec e = x - sp.x_goal;
  double cost = sp.q_weights.cwiseProduct(e).squaredNorm();
  cost += sp.R(0, 0) * u(0) * u(0);
  return cost;
}

double robotarm_cost(const Vec& x, const Vec& u, const EnvSpec& sp) {
  const Vec e = x - sp.x_goal;
  return e.dot(sp.Q * e) + u.dot(sp.R * u);
}

double quadrotor_cost(const Vec& x, const Vec& u, const EnvSpec& sp) {
  const Vec pg = sp.x_goal.segment(0, 3), vg = sp.x_goal.segment(3, 3),
            qg = sp.x_goal.segment(6, 4), wg = sp.x_goal.segment(10, 3);
  const Vec p = x.segment(0, 3), v = x.segment(3, 3), q = x.segment(6, 4),
            w = x.segment(10, 3);
  const double trace_term =
      0.5 * sp.alpha(0) *
      (Mat::Identity(3, 3) - dcm(qg).transpose() * dcm(q)).trace();
  return trace_term + sp.alpha(1) * (p - pg).squaredNorm() +
         sp.alpha(2) * (v - vg).squaredNorm() +
         sp.alpha(3) * (w - wg).squaredNorm() + u.dot(sp.R * u);
}

EnvSpec cartpole_spec() {
  EnvSpec sp;
  sp.name = "cartpole";
  sp.n = 4;
  sp.m = 1;
  sp.dt = 0.05;
  sp.T = 20;
  sp.phys = {{"mc", 1.0}, {"mp", 0.1}, {"l", 0.5}, {"g", 9.81}};
  sp.q_weights = Vec::Ones(4);
  sp.R = Mat::Constant(1, 1, 0.1);
  sp.x_goal = Vec::Zero(4);
  sp.x_init = (Vec(4) << 0.0, 0.2, 0.0, 0.0).finished();
  sp.action_scale = 1.0;
  return sp;
}

EnvSpec robotarm_spec() {
  EnvSpec sp;
  sp.name = "robotarm";
  sp.n = 4;
  sp.m = 2;
  sp.dt = 0.05;
  sp.T = 20;
  sp.phys = {{"m1", 1.0}, {"m2", 1.0}, {"l1", 1.0}, {"l2", 1.0},
             {"g", 9.81}};
  sp.Q = Mat::Identity(4, 4);
  sp.R = 0.1 * Mat::Identity(2, 2);
  sp.x_goal = Vec::Zero(4);
  sp.x_init = (Vec(4) << 0.5, -0.3, 0.0, 0.0).finished();
  sp.action_scale = 1.0;
  return sp;
}

EnvSpec quadrotor_spec() {
  EnvSpec sp;
  sp.name = "quadrotor";
  sp.n = 13;
  sp.m = 4;
  sp.dt = 0.1;
  sp.T = 20;
  sp.phys = {{"mass", 1.0}, {"Jx", 0.01}, {"Jy", 0.01}, {"Jz", 0.02},
             {"lw", 0.4},   {"c", 0.01},  {"g", 9.81}};
  sp.alpha = (Vec(4) << 1.0, 1.0, 0.1, 0.1).finished();
  sp.R = 0.01 * Mat::Identity(4, 4);
  sp.x_goal = Vec::Zero(13);
  sp.x_goal(6) = 1.0;  // identity quaternion
  sp.x_init = Vec::Zero(13);
  sp.x_init(0) = 0.3;
  sp.x_init(1) = -0.2;
  sp.x_init(2) = 0.4;
  sp.x_init(6) = 1.0;
  sp.action_scale = 2.4525;  // hover thrust per rotor, m*g/4
  return sp;
}

void apply_overrides(EnvSpec& sp, const nlohmann::json& ov) {
  if (!ov.is_object()) throw ConfigError("env overrides must be an object");
  for (const auto& [key, val] : ov.items()) {
    if (key == "dt") {
      sp.dt = val.get<double>();
      if (!(sp.dt > 0.0)) throw ConfigError("dt must be positive");
    } else if (key == "T") {
      sp.T = val.get<int>();
      if (sp.T <= 0) throw ConfigError("T must be positive");
    } else if (key == "x_goal") {
      sp.x_goal = jsonio::vec_from_json(val);
      if (sp.x_goal.size() != sp.n) throw ConfigError("x_goal length");
    } else if (key == "x_init") {
      sp.x_init = jsonio::vec_from_json(val);
      if (sp.x_init.size() != sp.n) throw ConfigError("x_init length");
    } else if (key == "phys") {
      if (!val.is_object()) throw ConfigError("phys must be an object");
      for (const auto& [pk, pv] : val.items()) {
        if (sp.phys.find(pk) == sp.phys.end()) {
          throw ConfigError("unknown physical parameter: " + pk);
        }
        sp.phys[pk] = pv.get<double>();
        if (!(sp.phys[pk] > 0.0)) {
          throw ConfigError("physical parameter must be positive: " + pk);
        }
      }
    } else if (key == "q_weights") {
      sp.q_weights = jsonio::vec_from_json(val);
      if (sp.q_weights.size() != sp.n) throw ConfigError("q_weights length");
    } else if (key == "Q") {
      sp.Q = jsonio::mat_from_json(val);
      if (sp.Q.rows() != sp.n || sp.Q.cols() != sp.n) {
        throw ConfigError("Q shape");
      }
    } else if (key == "R") {
      if (val.is_number()) {
        sp.R = Mat::Constant(sp.m, sp.m, 0.0);
        sp.R.diagonal().setConstant(val.get<double>());
      } else {
        sp.R = jsonio::mat_from_json(val);
      }
      if (sp.R.rows() != sp.m || sp.R.cols() != sp.m) {
        throw ConfigError("R shape");
      }
    } else if (key == "alpha") {
      sp.alpha = jsonio::vec_from_json(val);
      if (sp.alpha.size() != 4) throw ConfigError("alpha length");
    } else if (key == "action_scale") {
      sp.action_scale = val.get<double>();
      if (!(sp.action_scale > 0.0)) {
        throw ConfigError("action_scale must be positive");
      }
    } else {
      throw ConfigError("unknown env override key: " + key);
    }
  }
}

}  // namespace

double EnvSpec::p(const std::string& key) const {
  const auto it = phys.find(key);
  if (it == phys.end()) {
    throw ConfigError("missing physical parameter: " + key);
  }
  return it->second;
}

EnvState cartpole_step(const EnvState& s, double force, const EnvSpec& sp) {
  check_state(s, 4);
  if (!std::isfinite(force)) throw NonFiniteEvaluation("cartpole force");
  EnvState next;
  next.x = finite_or_throw(Vec(s.x + sp.dt * cartpole_rhs(s.x, force, sp)),
                           "cartpole step");
  next.t = s.t + 1;
  return next;
}

EnvState robotarm_step(const EnvState& s, const Vec& u, const EnvSpec& sp) {
  check_state(s, 4);
  if (u.size() != 2) throw DimensionMismatch("arm torque size");
  if (!all_finite(u)) throw NonFiniteEvaluation("arm torque");
  EnvState next;
  next.x = finite_or_throw(Vec(s.x + sp.dt * robotarm_rhs(s.x, u, sp)),
                           "robot arm step");
  next.t = s.t + 1;
  return next;
}

EnvState quadrotor_step(const EnvState& s, const Vec& thrusts,
                        const EnvSpec& sp) {
  check_state(s, 13);
  if (thrusts.size() != 4) throw DimensionMismatch("thrust vector size");
  if (!all_finite(thrusts)) throw NonFiniteEvaluation("thrusts");
  EnvState next;
  next.x = finite_or_throw(Vec(s.x + sp.dt * quadrotor_rhs(s.x, thrusts, sp)),
                           "quadrotor step");
  next.x.segment(6, 4) /= next.x.segment(6, 4).norm();
  next.t = s.t + 1;
  return next;
}

double true_cost(const Env& env, const Vec& x, const Vec& u) {
  if (x.size() != env.spec.n || u.size() != env.spec.m) {
    throw DimensionMismatch("true_cost input sizes");
  }
  return env.cost(x, u);
}

namespace {

EnvSpec default_spec(const std::string& name) {
  if (name == "cartpole") return cartpole_spec();
  if (name == "robotarm") return robotarm_spec();
  if (name == "quadrotor") return quadrotor_spec();
  throw ConfigError("unknown environment: " + name);
}

// The closures capture the final spec by value, so the env stays a pure
// value type.
Env build_env(const EnvSpec& sp) {
  Env env;
  env.spec = sp;
  if (sp.name == "cartpole") {
    env.step = [sp](const Vec& x, const Vec& u) {
      EnvState s{x, 0};
      return cartpole_step(s, u(0), sp).x;
    };
    env.cost = [sp](const Vec& x, const Vec& u) {
      return cartpole_cost(x, u, sp);
    };
  } else if (sp.name == "robotarm") {
    env.step = [sp](const Vec& x, const Vec& u) {
      EnvState s{x, 0};
      return robotarm_step(s, u, sp).x;
    };
    env.cost = [sp](const Vec& x, const Vec& u) {
      return robotarm_cost(x, u, sp);
    };
  } else {
    env.step = [sp](const Vec& x, const Vec& u) {
      EnvState s{x, 0};
      return quadrotor_step(s, u, sp).x;
    };
    env.cost = [sp](const Vec& x, const Vec& u) {
      return quadrotor_cost(x, u, sp);
    };
  }
  return env;
}

}  // namespace

Env make_env(const std::string& name) { return build_env(default_spec(name)); }

Env make_env(const std::string& name, const nlohmann::json& overrides) {
  EnvSpec sp = default_spec(name);
  apply_overrides(sp, overrides);
  return build_env(sp);
}

ocp::BoundProblem baseline_problem(const Env& env, int horizon) {
  if (horizon <= 0) throw DomainError("horizon must be positive");
  const int n = env.spec.n, m = env.spec.m;
  ocp::BoundProblem pb;
  pb.n = n;
  pb.m = m;
  pb.H = horizon;
  pb.d = 0;
  const auto step = env.step;
  const auto cost = env.cost;

  pb.stage_value = cost;
  pb.dynamics_value = step;
  pb.terminal_value = [](const Vec&) { return 0.0; };
  pb.stage = [cost, n, m](const Vec& x, const Vec& u, bool) {
    models::StageEval se;
    se.c = cost(x, u);
    const auto fx = [&](const Vec& xx) { return cost(xx, u); };
    const auto fu = [&](const Vec& uu) { return cost(x, uu); };
    se.cx = numkit::fd_gradient(fx, x);
    se.cu = numkit::fd_gradient(fu, u);
    Vec v(n + m);
    v << x, u;
    const auto fv = [&](const Vec& vv) {
      return cost(vv.head(n), vv.tail(m));
    };
    const Mat hvv = numkit::fd_hessian(fv, v);
    se.cxx = hvv.topLeftCorner(n, n);
    se.cxu = hvv.topRightCorner(n, m);
    se.cuu = hvv.bottomRightCorner(m, m);
    se.cth = Mat::Zero(n + m, 0);
    return se;
  };
  pb.terminal = [](const Vec& x, bool) {
    models::TerminalEval te;
    te.c = 0.0;
    te.cx = Vec::Zero(x.size());
    te.cxx = Mat::Zero(x.size(), x.size());
    te.cth = Mat::Zero(x.size(), 0);
    return te;
  };
  pb.dynamics = [step, n, m](const Vec& x, const Vec& u, bool) {
    models::DynEval de;
    de.x_next = step(x, u);
    Vec v(n + m);
    v << x, u;
    const auto fv = [&](const Vec& vv) {
      return step(vv.head(n), vv.tail(m));
    };
    const Mat J = numkit::fd_jacobian(fv, v);
    de.fx = J.leftCols(n);
    de.fu = J.rightCols(m);
    de.fvv.assign(n, Mat::Zero(n + m, n + m));
    for (int k = 0; k < n; ++k) {
      const auto fk = [&](const Vec& vv) {
        return step(vv.head(n), vv.tail(m))(k);
      };
      de.fvv[k] = numkit::fd_hessian(fk, v);
    }
    de.fth = Mat::Zero(n, 0);
    de.fthv.assign(n, Mat::Zero(n + m, 0));
    return de;
  };
  return pb;
}

double optimal_baseline(const Env& env, int horizon,
                        const ocp::SolverCfg& cfg) {
  const ocp::BoundProblem pb = baseline_problem(env, horizon);
  const ocp::ConstraintSpec unconstrained;
  const ocp::PlanSolution plan =
      ocp::solve_plan(pb, env.spec.x_init, unconstrained, cfg);
  if (!plan.converged) {
    throw SolverFailure("baseline plan did not converge in " +
                        std::to_string(plan.iterations) + " iterations");
  }
  // Realized episode cost: replay the planned actions on the true system.
  Vec x = env.spec.x_init;
  double total = 0.0;
  for (int t = 0; t < horizon; ++t) {
    const Vec u = plan.actions.row(t);
    total += env.cost(x, u);
    x = env.step(x, u);
  }
  return total;
}

}  // namespace diffop::envs
