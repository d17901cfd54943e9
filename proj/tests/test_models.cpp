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
#include <filesystem>
#include <random>

#include "diffop/errors.hpp"
#include "diffop/jsonio.hpp"
#include "diffop/models.hpp"
#include "diffop/numkit.hpp"
#include "diffop/types.hpp"

using diffop::Mat;
using diffop::Vec;
namespace md = diffop::models;
namespace nk = diffop::numkit;

namespace {

md::ModelSpec quad_spec(int n, int m) {
  md::ModelSpec sp;
  sp.n = n;
  sp.m = m;
  sp.H = 3;
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

// Central differences of the stacked first derivatives with respect to the
// parameter block; the analytic mixed blocks must match these columns.
Mat fd_cost_mixed(const md::Model& model, const Vec& theta_c, const Vec& x,
                  const Vec& u) {
  const int n = static_cast<int>(x.size()), m = static_cast<int>(u.size());
  Mat out(n + m, theta_c.size());
  for (int j = 0; j < theta_c.size(); ++j) {
    const double h = nk::fd_step(0.0, theta_c[j]);
    Vec tp = theta_c, tm = theta_c;
    tp[j] += h;
    tm[j] -= h;
    const md::StageEval ep = model.stage_cost_derivs(tp, x, u);
    const md::StageEval em = model.stage_cost_derivs(tm, x, u);
    out.col(j).head(n) = (ep.cx - em.cx) / (2.0 * h);
    out.col(j).tail(m) = (ep.cu - em.cu) / (2.0 * h);
  }
  return out;
}

Mat fd_dyn_param(const md::Model& model, const Vec& theta_f, const Vec& x,
                 const Vec& u) {
  Mat out(x.size(), theta_f.size());
  for (int j = 0; j < theta_f.size(); ++j) {
    const double h = nk::fd_step(0.0, theta_f[j]);
    Vec tp = theta_f, tm = theta_f;
    tp[j] += h;
    tm[j] -= h;
    out.col(j) =
        (model.dynamics_step(tp, x, u) - model.dynamics_step(tm, x, u)) /
        (2.0 * h);
  }
  return out;
}

}  // namespace

TEST_CASE("quadratic stage cost vanishes at the goal under zero action") {
  md::ModelSpec sp = quad_spec(4, 1);
  sp.x_goal = (Vec(4) << 0.5, -1.0, 2.0, 0.0).finished();
  const md::Model model(sp);
  Vec theta_c(model.dim_theta_c());
  theta_c << 1.0, 1.0, 1.0, 1.0, 0.7;
  CHECK(model.stage_cost(theta_c, sp.x_goal, Vec::Zero(1)) == 0.0);
}

TEST_CASE("quadratic stage cost sums weighted errors and control penalty") {
  const md::Model model(quad_spec(4, 1));
  // weights (2,1,1,1), unit error in the first coordinate, control penalty
  // 0.1 realized through the factor sqrt(0.1 - floor), action 3.
  Vec theta_c(5);
  theta_c << 2.0, 1.0, 1.0, 1.0, std::sqrt(0.1 - md::kRMin);
  Vec x = Vec::Zero(4);
  x[0] = 1.0;
  Vec u(1);
  u << 3.0;
  CHECK(std::abs(model.stage_cost(theta_c, x, u) - 4.9) <= 1e-12);
}

TEST_CASE("quadratic curvature blocks are state independent") {
  const md::Model model(quad_spec(3, 2));
  std::mt19937 gen(7);
  Vec theta_c = random_vec(gen, model.dim_theta_c(), 1.0);
  const Vec x1 = random_vec(gen, 3, 2.0), u1 = random_vec(gen, 2, 2.0);
  const Vec x2 = random_vec(gen, 3, 2.0), u2 = random_vec(gen, 2, 2.0);
  const md::StageEval a = model.stage_cost_derivs(theta_c, x1, u1);
  const md::StageEval b = model.stage_cost_derivs(theta_c, x2, u2);
  CHECK((a.cuu - b.cuu).lpNorm<Eigen::Infinity>() <= 1e-15);
  CHECK((a.cxx - b.cxx).lpNorm<Eigen::Infinity>() <= 1e-15);
  CHECK(a.cxu.isZero(0.0));
}

TEST_CASE("quadratic state gradient doubles the weighted error") {
  const md::Model model(quad_spec(4, 1));
  Vec theta_c(5);
  theta_c << 1.0, 1.0, 1.0, 1.0, 0.0;
  Vec x = Vec::Zero(4);
  x[0] = 1.0;
  const md::StageEval ev = model.stage_cost_derivs(theta_c, x, Vec::Zero(1));
  Vec want = Vec::Zero(4);
  want[0] = 2.0;
  CHECK((ev.cx - want).lpNorm<Eigen::Infinity>() <= 1e-15);
}

TEST_CASE("stage cost derivative blocks match finite differences") {
  std::mt19937 gen(11);
  for (const md::CostKind kind : {md::CostKind::kQuadratic,
                                  md::CostKind::kIcnn}) {
    md::ModelSpec sp = quad_spec(3, 2);
    sp.cost_kind = kind;
    if (kind == md::CostKind::kIcnn) sp.icnn_widths = {4};
    const md::Model model(sp);
    for (int rep = 0; rep < 5; ++rep) {
      const Vec theta_c = random_vec(gen, model.dim_theta_c(), 0.8);
      const Vec x = random_vec(gen, 3, 1.0);
      const Vec u = random_vec(gen, 2, 1.0);
      const md::StageEval ev = model.stage_cost_derivs(theta_c, x, u);
      CHECK(std::abs(ev.c - model.stage_cost(theta_c, x, u)) <= 1e-14);

      Vec v(5);
      v << x, u;
      auto cost_v = [&](const Vec& vv) {
        return model.stage_cost(theta_c, vv.head(3), vv.tail(2));
      };
      const Vec g = nk::fd_gradient(cost_v, v);
      CHECK((g.head(3) - ev.cx).lpNorm<Eigen::Infinity>() <= 1e-6);
      CHECK((g.tail(2) - ev.cu).lpNorm<Eigen::Infinity>() <= 1e-6);

      const Mat Hfd = nk::fd_hessian(cost_v, v);
      Mat Han(5, 5);
      Han << ev.cxx, ev.cxu, ev.cxu.transpose(), ev.cuu;
      CHECK(nk::rel_err(Han, Hfd) <= 1e-4);
      CHECK((Han - Han.transpose()).lpNorm<Eigen::Infinity>() <= 1e-12);

      CHECK(nk::rel_err(ev.cth, fd_cost_mixed(model, theta_c, x, u)) <= 1e-6);
    }
  }
}

TEST_CASE("terminal cost derivative blocks match finite differences") {
  std::mt19937 gen(13);
  for (const md::CostKind kind : {md::CostKind::kQuadratic,
                                  md::CostKind::kIcnn}) {
    md::ModelSpec sp = quad_spec(3, 1);
    sp.cost_kind = kind;
    if (kind == md::CostKind::kIcnn) sp.icnn_widths = {3};
    const md::Model model(sp);
    const Vec theta_H = random_vec(gen, model.dim_theta_H(), 0.8);
    const Vec x = random_vec(gen, 3, 1.0);
    const md::TerminalEval ev = model.terminal_cost_derivs(theta_H, x);
    CHECK(std::abs(ev.c - model.terminal_cost(theta_H, x)) <= 1e-14);

    auto cost_x = [&](const Vec& xx) { return model.terminal_cost(theta_H, xx); };
    CHECK((nk::fd_gradient(cost_x, x) - ev.cx).lpNorm<Eigen::Infinity>() <=
          1e-6);
    CHECK(nk::rel_err(ev.cxx, nk::fd_hessian(cost_x, x)) <= 1e-4);

    Mat cth_fd(3, theta_H.size());
    for (int j = 0; j < theta_H.size(); ++j) {
      const double h = nk::fd_step(0.0, theta_H[j]);
      Vec tp = theta_H, tm = theta_H;
      tp[j] += h;
      tm[j] -= h;
      cth_fd.col(j) = (model.terminal_cost_derivs(tp, x).cx -
                       model.terminal_cost_derivs(tm, x).cx) /
                      (2.0 * h);
    }
    CHECK(nk::rel_err(ev.cth, cth_fd) <= 1e-6);
  }
}

TEST_CASE("fixed terminal cost is identically zero with no parameters") {
  md::ModelSpec sp = quad_spec(3, 1);
  sp.terminal_fixed = true;
  const md::Model model(sp);
  CHECK(model.dim_theta_H() == 0);
  CHECK(model.terminal_cost(Vec(0), (Vec(3) << 1.0, 2.0, 3.0).finished()) ==
        0.0);
}

TEST_CASE("icnn with zero parameters outputs log two everywhere") {
  const int d = md::IcnnParams::param_count(2, 3, 1);
  const md::IcnnParams p = md::IcnnParams::unpack(2, 3, 1, Vec::Zero(d));
  for (const double a : {-2.0, 0.0, 1.5}) {
    Vec v(2);
    v << a, -a;
    const Vec y = md::icnn_forward(p, v);
    CHECK(y.size() == 1);
    CHECK(std::abs(y[0] - std::log(2.0)) <= 1e-15);
  }
}

TEST_CASE("icnn outputs are convex along random segments") {
  std::mt19937 gen(17);
  const int in = 3, hidden = 4;
  const int d = md::IcnnParams::param_count(in, hidden, 1);
  std::uniform_real_distribution<double> t01(0.0, 1.0);
  for (int rep = 0; rep < 50; ++rep) {
    const md::IcnnParams p =
        md::IcnnParams::unpack(in, hidden, 1, random_vec(gen, d, 1.0));
    const Vec v1 = random_vec(gen, in, 2.0);
    const Vec v2 = random_vec(gen, in, 2.0);
    const double t = t01(gen);
    const double lhs = md::icnn_forward(p, Vec(t * v1 + (1.0 - t) * v2))[0];
    const double rhs = t * md::icnn_forward(p, v1)[0] +
                       (1.0 - t) * md::icnn_forward(p, v2)[0];
    CHECK(lhs <= rhs + 1e-10);
  }
}

TEST_CASE("icnn difference hessians are positive semidefinite") {
  std::mt19937 gen(19);
  const int in = 2, hidden = 3;
  const int d = md::IcnnParams::param_count(in, hidden, 1);
  const md::IcnnParams p =
      md::IcnnParams::unpack(in, hidden, 1, random_vec(gen, d, 1.0));
  auto f = [&](const Vec& v) { return md::icnn_forward(p, v)[0]; };
  for (int rep = 0; rep < 100; ++rep) {
    const Vec v = random_vec(gen, in, 2.0);
    const Mat H = nk::fd_hessian(f, v);
    const Eigen::SelfAdjointEigenSolver<Mat> eig(0.5 * (H + H.transpose()));
    CHECK(eig.eigenvalues().minCoeff() >= -1e-8);
  }
}

TEST_CASE("icnn analytic derivatives match the finite-difference twin") {
  std::mt19937 gen(23);
  const int in = 3, hidden = 4, out = 2;
  const int d = md::IcnnParams::param_count(in, hidden, out);
  for (int rep = 0; rep < 5; ++rep) {
    const md::IcnnParams p =
        md::IcnnParams::unpack(in, hidden, out, random_vec(gen, d, 0.8));
    const Vec v = random_vec(gen, in, 1.5);
    const md::IcnnEval an = md::icnn_eval(p, v, true);
    const md::IcnnEval fd = md::icnn_eval_fd(p, v, true);
    CHECK((an.y - fd.y).lpNorm<Eigen::Infinity>() <= 1e-12);
    CHECK(nk::rel_err(an.dv, fd.dv) <= 1e-6);
    CHECK(nk::rel_err(an.dtheta, fd.dtheta) <= 1e-6);
    for (int k = 0; k < out; ++k) {
      CHECK(nk::rel_err(an.dvv[k], fd.dvv[k]) <= 1e-5);
      CHECK(nk::rel_err(an.dtheta_dv[k], fd.dtheta_dv[k]) <= 1e-5);
      CHECK((an.dvv[k] - an.dvv[k].transpose()).lpNorm<Eigen::Infinity>() <=
            1e-12);
    }
  }
}

TEST_CASE("linear dynamics apply one scaled euler update") {
  md::ModelSpec sp = quad_spec(1, 1);
  sp.dt = 0.1;
  const md::Model model(sp);
  Vec theta_f(2);
  theta_f << 0.5, 0.1;
  Vec x(1), u(1);
  x << 1.0;
  u << 2.0;
  // x' = x + dt (0.5 x + 0.1 u) = 1 + 0.1 * 0.7
  CHECK(std::abs(model.dynamics_step(theta_f, x, u)[0] - 1.07) <= 1e-15);
  CHECK(model.dynamics_step(Vec::Zero(2), x, u)[0] == 1.0);

  const md::DynEval ev = model.dynamics_derivs(theta_f, x, u);
  CHECK(std::abs(ev.fx(0, 0) - 1.05) <= 1e-15);
  CHECK(std::abs(ev.fu(0, 0) - 0.01) <= 1e-15);
  for (const Mat& blk : ev.fvv) CHECK(blk.isZero(0.0));
}

TEST_CASE("dynamics derivative blocks match finite differences") {
  std::mt19937 gen(29);
  for (const md::DynamicsKind kind : {md::DynamicsKind::kLinearEuler,
                                      md::DynamicsKind::kIcnnResidual}) {
    md::ModelSpec sp = quad_spec(3, 2);
    sp.dynamics_kind = kind;
    if (kind == md::DynamicsKind::kIcnnResidual) sp.icnn_widths = {4};
    const md::Model model(sp);
    for (int rep = 0; rep < 5; ++rep) {
      const Vec theta_f = random_vec(gen, model.dim_theta_f(), 0.6);
      const Vec x = random_vec(gen, 3, 1.0);
      const Vec u = random_vec(gen, 2, 1.0);
      const md::DynEval ev = model.dynamics_derivs(theta_f, x, u);
      CHECK((ev.x_next - model.dynamics_step(theta_f, x, u))
                .lpNorm<Eigen::Infinity>() <= 1e-14);

      Vec v(5);
      v << x, u;
      auto step_v = [&](const Vec& vv) {
        return model.dynamics_step(theta_f, vv.head(3), vv.tail(2));
      };
      const Mat J = nk::fd_jacobian(step_v, v);
      CHECK(nk::rel_err(ev.fx, J.leftCols(3)) <= 1e-5);
      CHECK(nk::rel_err(ev.fu, J.rightCols(2)) <= 1e-5);
      CHECK(nk::rel_err(ev.fth, fd_dyn_param(model, theta_f, x, u)) <= 1e-5);

      for (int k = 0; k < 3; ++k) {
        auto comp = [&](const Vec& vv) { return step_v(vv)[k]; };
        CHECK(nk::rel_err(ev.fvv[k], nk::fd_hessian(comp, v)) <= 1e-4);
      }
      // Mixed parameter-input second derivatives against differences of the
      // input Jacobian over parameter shifts.
      for (int k = 0; k < 3; ++k) {
        Mat fd(5, theta_f.size());
        for (int j = 0; j < theta_f.size(); ++j) {
          const double h = nk::fd_step(0.0, theta_f[j]);
          Vec tp = theta_f, tm = theta_f;
          tp[j] += h;
          tm[j] -= h;
          const md::DynEval ep = model.dynamics_derivs(tp, x, u);
          const md::DynEval em = model.dynamics_derivs(tm, x, u);
          Vec rowp(5), rowm(5);
          rowp << ep.fx.row(k).transpose(), ep.fu.row(k).transpose();
          rowm << em.fx.row(k).transpose(), em.fu.row(k).transpose();
          fd.col(j) = (rowp - rowm) / (2.0 * h);
        }
        CHECK(nk::rel_err(ev.fthv[k], fd) <= 1e-5);
      }
    }
  }
}

TEST_CASE("analytic dynamics differentiate the registered callback") {
  md::ModelSpec sp = quad_spec(2, 1);
  sp.dynamics_kind = md::DynamicsKind::kAnalytic;
  md::Model model(sp);
  CHECK_THROWS_AS(
      (void)model.dynamics_step(Vec(0), Vec::Zero(2), Vec::Zero(1)),
      diffop::ConfigError);
  model.set_analytic_step([](const Vec& x, const Vec& u) {
    Vec out(2);
    out[0] = x[0] + 0.1 * x[1];
    out[1] = x[1] + 0.1 * (std::sin(x[0]) + u[0]);
    return out;
  });
  Vec x(2), u(1);
  x << 0.3, -0.2;
  u << 0.5;
  const md::DynEval ev = model.dynamics_derivs(Vec(0), x, u);
  CHECK(std::abs(ev.fx(1, 0) - 0.1 * std::cos(0.3)) <= 1e-6);
  CHECK(std::abs(ev.fu(1, 0) - 0.1) <= 1e-6);
  CHECK(ev.fth.cols() == 0);
}

TEST_CASE("control curvature never drops below twice the floor") {
  std::mt19937 gen(31);
  const md::Model model(quad_spec(2, 3));
  for (int rep = 0; rep < 20; ++rep) {
    const Vec theta_c = random_vec(gen, model.dim_theta_c(), 2.0);
    const md::StageEval ev = model.stage_cost_derivs(
        theta_c, random_vec(gen, 2, 1.0), random_vec(gen, 3, 1.0));
    const Eigen::SelfAdjointEigenSolver<Mat> eig(ev.cuu);
    CHECK(eig.eigenvalues().minCoeff() >= 2.0 * md::kRMin * (1.0 - 1e-12));
  }
}

TEST_CASE("parameter packing round-trips and rejects wrong sizes") {
  md::ModelSpec sp = quad_spec(3, 2);
  sp.dynamics_kind = md::DynamicsKind::kIcnnResidual;
  sp.icnn_widths = {4};
  const md::Model model(sp);
  std::mt19937 gen(37);
  const Vec theta = random_vec(gen, model.dim_theta(), 1.0);
  const md::PolicyParams p = model.unpack(theta);
  CHECK(p.theta_c.size() == model.dim_theta_c());
  CHECK(p.theta_H.size() == model.dim_theta_H());
  CHECK(p.theta_f.size() == model.dim_theta_f());
  CHECK((model.pack(p) - theta).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK_THROWS_AS((void)model.unpack(Vec::Zero(model.dim_theta() + 1)),
                  diffop::DimensionMismatch);
  md::PolicyParams bad = p;
  bad.theta_c = Vec::Zero(model.dim_theta_c() + 1);
  CHECK_THROWS_AS((void)model.pack(bad), diffop::DimensionMismatch);
}

TEST_CASE("model specs and parameters serialize to json and back") {
  md::ModelSpec sp = quad_spec(3, 2);
  sp.x_goal = (Vec(3) << 0.1, -0.2, 0.3).finished();
  const md::ModelSpec back = md::spec_from_json(md::spec_to_json(sp));
  CHECK(back.n == sp.n);
  CHECK(back.m == sp.m);
  CHECK(back.H == sp.H);
  CHECK(back.dt == sp.dt);
  CHECK(back.cost_kind == sp.cost_kind);
  CHECK(back.dynamics_kind == sp.dynamics_kind);
  CHECK((back.x_goal - sp.x_goal).lpNorm<Eigen::Infinity>() == 0.0);

  const md::Model model(sp);
  std::mt19937 gen(41);
  md::PolicyParams p = model.unpack(random_vec(gen, model.dim_theta(), 1.0));
  const std::string path = "models_roundtrip_params.json";
  md::save_params(path, sp, p);
  const auto [sp2, p2] = md::load_params(path);
  CHECK((model.pack(p2) - model.pack(p)).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK(sp2.n == sp.n);
  std::filesystem::remove(path);

  diffop::jsonio::json j = md::spec_to_json(sp);
  j["surprise"] = 1;
  CHECK_THROWS_AS((void)md::spec_from_json(j), diffop::ConfigError);
  diffop::jsonio::json missing;
  missing["n"] = 2;
  CHECK_THROWS_AS((void)md::spec_from_json(missing), diffop::ConfigError);
}

TEST_CASE("float serialization preserves seventeen significant digits") {
  const double x = 0.1 + 0.2;
  const std::string s = diffop::jsonio::fmt_g17(x);
  CHECK(std::stod(s) == x);
  CHECK(std::stod(diffop::jsonio::fmt_g17(M_PI)) == M_PI);
}

TEST_CASE("model spec validation rejects degenerate dimensions") {
  md::ModelSpec sp = quad_spec(0, 1);
  CHECK_THROWS_AS(sp.validate(), diffop::ConfigError);
  sp = quad_spec(2, 1);
  sp.dt = 0.0;
  CHECK_THROWS_AS(sp.validate(), diffop::ConfigError);
  sp = quad_spec(2, 1);
  sp.cost_kind = md::CostKind::kIcnn;
  CHECK_THROWS_AS(sp.validate(), diffop::ConfigError);  // missing width
  sp.icnn_widths = {3, 3};
  CHECK_THROWS_AS(sp.validate(), diffop::ConfigError);  // one layer only
  CHECK_THROWS_AS((void)md::cost_kind_from_string("cubic"),
                  diffop::ConfigError);
  CHECK_THROWS_AS((void)md::dynamics_kind_from_string("rk4"),
                  diffop::ConfigError);
}
