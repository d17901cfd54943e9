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

#include "diffop/models.hpp"

#include <cmath>

#include "diffop/numkit.hpp"

namespace diffop::models {

std::string to_string(CostKind k) {
  return k == CostKind::kQuadratic ? "quadratic" : "icnn";
}

std::string to_string(DynamicsKind k) {
  switch (k) {
    case DynamicsKind::kLinearEuler:
      return "linear_euler";
    case DynamicsKind::kIcnnResidual:
      return "icnn_residual";
    default:
      return "analytic";
  }
}

CostKind cost_kind_from_string(const std::string& s) {
  if (s == "quadratic") return CostKind::kQuadratic;
  if (s == "icnn") return CostKind::kIcnn;
  throw ConfigError("unknown cost_kind '" + s + "'");
}

DynamicsKind dynamics_kind_from_string(const std::string& s) {
  if (s == "linear_euler") return DynamicsKind::kLinearEuler;
  if (s == "icnn_residual") return DynamicsKind::kIcnnResidual;
  if (s == "analytic") return DynamicsKind::kAnalytic;
  throw ConfigError("unknown dynamics_kind '" + s + "'");
}

void ModelSpec::validate() const {
  if (n <= 0) throw ConfigError("ModelSpec: n must be positive");
  if (m <= 0) throw ConfigError("ModelSpec: m must be positive");
  if (H <= 0) throw ConfigError("ModelSpec: H must be positive");
  if (!(dt > 0.0)) throw ConfigError("ModelSpec: dt must be positive");
  const bool uses_icnn = cost_kind == CostKind::kIcnn ||
                         dynamics_kind == DynamicsKind::kIcnnResidual;
  if (uses_icnn) {
    if (icnn_widths.size() != 1) {
      throw ConfigError("ModelSpec: exactly one hidden width is supported");
    }
    if (icnn_widths[0] <= 0) {
      throw ConfigError("ModelSpec: icnn width must be positive");
    }
  }
  if (x_goal.size() != 0 && x_goal.size() != n) {
    throw ConfigError("ModelSpec: x_goal must have size n");
  }
}

Vec ModelSpec::goal() const {
  return x_goal.size() == 0 ? Vec::Zero(n) : x_goal;
}

namespace {

Mat control_penalty(const Vec& ell, int m) {
  Mat L(m, m);
  for (int a = 0; a < m; ++a)
    for (int b = 0; b < m; ++b) L(a, b) = ell[a * m + b];
  return kRMin * Mat::Identity(m, m) + L * L.transpose();
}

}  // namespace

Model::Model(ModelSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  const int n = spec_.n, m = spec_.m;
  const int w = spec_.icnn_widths.empty() ? 0 : spec_.icnn_widths[0];
  switch (spec_.cost_kind) {
    case CostKind::kQuadratic:
      dc_ = n + m * m;
      dH_ = spec_.terminal_fixed ? 0 : n;
      break;
    case CostKind::kIcnn:
      dc_ = IcnnParams::param_count(n + m, w, 1);
      dH_ = spec_.terminal_fixed ? 0 : IcnnParams::param_count(n, w, 1);
      break;
  }
  switch (spec_.dynamics_kind) {
    case DynamicsKind::kLinearEuler:
      df_ = (n + m) * n;
      break;
    case DynamicsKind::kIcnnResidual:
      df_ = IcnnParams::param_count(n + m, w, n);
      break;
    case DynamicsKind::kAnalytic:
      df_ = 0;
      break;
  }
}

void Model::set_analytic_step(std::function<Vec(const Vec&, const Vec&)> step) {
  analytic_step_ = std::move(step);
}

Vec Model::pack(const PolicyParams& p) const {
  if (p.theta_c.size() != dc_ || p.theta_H.size() != dH_ ||
      p.theta_f.size() != df_) {
    throw DimensionMismatch("pack: parameter block sizes do not match spec");
  }
  Vec theta(dim_theta());
  theta << p.theta_c, p.theta_H, p.theta_f;
  return theta;
}

PolicyParams Model::unpack(const Vec& theta) const {
  if (theta.size() != dim_theta()) {
    throw DimensionMismatch("unpack: flat vector has size " +
                            std::to_string(theta.size()) + ", expected " +
                            std::to_string(dim_theta()));
  }
  PolicyParams p;
  p.theta_c = theta.segment(0, dc_);
  p.theta_H = theta.segment(dc_, dH_);
  p.theta_f = theta.segment(dc_ + dH_, df_);
  return p;
}

PolicyParams Model::default_params() const {
  PolicyParams p;
  p.theta_c = Vec::Zero(dc_);
  p.theta_H = Vec::Zero(dH_);
  p.theta_f = Vec::Zero(df_);
  if (spec_.cost_kind == CostKind::kQuadratic) {
    p.theta_c.head(spec_.n).setOnes();
    for (int a = 0; a < spec_.m; ++a) {
      p.theta_c[spec_.n + a * spec_.m + a] = 1.0;
    }
    if (!spec_.terminal_fixed) p.theta_H.setOnes();
  }
  return p;
}

void Model::check_xu(const Vec& x, const Vec& u) const {
  if (x.size() != spec_.n) {
    throw DimensionMismatch("state has size " + std::to_string(x.size()) +
                            ", expected " + std::to_string(spec_.n));
  }
  if (u.size() != spec_.m) {
    throw DimensionMismatch("action has size " + std::to_string(u.size()) +
                            ", expected " + std::to_string(spec_.m));
  }
}

double Model::stage_cost(const Vec& theta_c, const Vec& x, const Vec& u) const {
  check_xu(x, u);
  if (theta_c.size() != dc_) {
    throw DimensionMismatch("stage_cost: theta_c has wrong size");
  }
  double c = 0.0;
  if (spec_.cost_kind == CostKind::kQuadratic) {
    const Vec q = theta_c.head(spec_.n);
    const Mat R = control_penalty(theta_c.tail(spec_.m * spec_.m), spec_.m);
    const Vec e = x - spec_.goal();
    c = (q.array().square() * e.array().square()).sum() + u.dot(R * u);
  } else {
    const int w = spec_.icnn_widths[0];
    const IcnnParams p = IcnnParams::unpack(spec_.n + spec_.m, w, 1, theta_c);
    Vec v(spec_.n + spec_.m);
    v << x, u;
    c = icnn_forward(p, v)[0];
  }
  if (!all_finite(c)) throw NonFiniteEvaluation("stage_cost produced NaN/Inf");
  return c;
}

StageEval Model::stage_cost_derivs(const Vec& theta_c, const Vec& x,
                                   const Vec& u) const {
  check_xu(x, u);
  if (theta_c.size() != dc_) {
    throw DimensionMismatch("stage_cost_derivs: theta_c has wrong size");
  }
  const int n = spec_.n, m = spec_.m;
  StageEval ev;
  if (spec_.cost_kind == CostKind::kQuadratic) {
    const Vec q = theta_c.head(n);
    const Vec ell = theta_c.tail(m * m);
    Mat L(m, m);
    for (int a = 0; a < m; ++a)
      for (int b = 0; b < m; ++b) L(a, b) = ell[a * m + b];
    const Mat R = kRMin * Mat::Identity(m, m) + L * L.transpose();
    const Vec e = x - spec_.goal();
    ev.c = (q.array().square() * e.array().square()).sum() + u.dot(R * u);
    ev.cx = 2.0 * q.array().square() * e.array();
    ev.cu = 2.0 * R * u;
    ev.cxx = (2.0 * q.array().square()).matrix().asDiagonal();
    ev.cuu = 2.0 * R;
    ev.cxu = Mat::Zero(n, m);
    ev.cth = Mat::Zero(n + m, dc_);
    for (int j = 0; j < n; ++j) ev.cth(j, j) = 4.0 * q[j] * e[j];
    const Vec Ltu = L.transpose() * u;
    for (int i = 0; i < m; ++i) {
      for (int a = 0; a < m; ++a) {
        for (int b = 0; b < m; ++b) {
          double val = L(i, b) * u[a];
          if (i == a) val += Ltu[b];
          ev.cth(n + i, n + a * m + b) = 2.0 * val;
        }
      }
    }
  } else {
    const int w = spec_.icnn_widths[0];
    const IcnnParams p = IcnnParams::unpack(n + m, w, 1, theta_c);
    Vec v(n + m);
    v << x, u;
    const IcnnEval ie = icnn_eval(p, v, true);
    ev.c = ie.y[0];
    ev.cx = ie.dv.row(0).head(n);
    ev.cu = ie.dv.row(0).tail(m);
    ev.cxx = ie.dvv[0].topLeftCorner(n, n);
    ev.cuu = ie.dvv[0].bottomRightCorner(m, m);
    ev.cxu = ie.dvv[0].topRightCorner(n, m);
    ev.cth = ie.dtheta_dv[0];
  }
  if (!all_finite(ev.c) || !all_finite(ev.cx) || !all_finite(ev.cu) ||
      !all_finite(ev.cxx) || !all_finite(ev.cuu) || !all_finite(ev.cth)) {
    throw NonFiniteEvaluation("stage_cost_derivs produced NaN/Inf");
  }
  return ev;
}

double Model::terminal_cost(const Vec& theta_H, const Vec& x) const {
  if (x.size() != spec_.n) {
    throw DimensionMismatch("terminal_cost: state has wrong size");
  }
  if (theta_H.size() != dH_) {
    throw DimensionMismatch("terminal_cost: theta_H has wrong size");
  }
  if (spec_.terminal_fixed) return 0.0;
  double c = 0.0;
  if (spec_.cost_kind == CostKind::kQuadratic) {
    const Vec e = x - spec_.goal();
    c = (theta_H.array().square() * e.array().square()).sum();
  } else {
    const int w = spec_.icnn_widths[0];
    const IcnnParams p = IcnnParams::unpack(spec_.n, w, 1, theta_H);
    c = icnn_forward(p, x)[0];
  }
  if (!all_finite(c)) {
    throw NonFiniteEvaluation("terminal_cost produced NaN/Inf");
  }
  return c;
}

TerminalEval Model::terminal_cost_derivs(const Vec& theta_H,
                                         const Vec& x) const {
  if (x.size() != spec_.n) {
    throw DimensionMismatch("terminal_cost_derivs: state has wrong size");
  }
  if (theta_H.size() != dH_) {
    throw DimensionMismatch("terminal_cost_derivs: theta_H has wrong size");
  }
  const int n = spec_.n;
  TerminalEval ev;
  if (spec_.terminal_fixed) {
    ev.c = 0.0;
    ev.cx = Vec::Zero(n);
    ev.cxx = Mat::Zero(n, n);
    ev.cth = Mat::Zero(n, 0);
    return ev;
  }
  if (spec_.cost_kind == CostKind::kQuadratic) {
    const Vec e = x - spec_.goal();
    ev.c = (theta_H.array().square() * e.array().square()).sum();
    ev.cx = 2.0 * theta_H.array().square() * e.array();
    ev.cxx = (2.0 * theta_H.array().square()).matrix().asDiagonal();
    ev.cth = Mat::Zero(n, dH_);
    for (int j = 0; j < n; ++j) ev.cth(j, j) = 4.0 * theta_H[j] * e[j];
  } else {
    const int w = spec_.icnn_widths[0];
    const IcnnParams p = IcnnParams::unpack(n, w, 1, theta_H);
    const IcnnEval ie = icnn_eval(p, x, true);
    ev.c = ie.y[0];
    ev.cx = ie.dv.row(0);
    ev.cxx = ie.dvv[0];
    ev.cth = ie.dtheta_dv[0];
  }
  if (!all_finite(ev.c) || !all_finite(ev.cx) || !all_finite(ev.cxx) ||
      !all_finite(ev.cth)) {
    throw NonFiniteEvaluation("terminal_cost_derivs produced NaN/Inf");
  }
  return ev;
}

Vec Model::dynamics_step(const Vec& theta_f, const Vec& x, const Vec& u) const {
  check_xu(x, u);
  if (theta_f.size() != df_) {
    throw DimensionMismatch("dynamics_step: theta_f has wrong size");
  }
  const int n = spec_.n, m = spec_.m;
  Vec out;
  switch (spec_.dynamics_kind) {
    case DynamicsKind::kLinearEuler: {
      Vec v(n + m);
      v << x, u;
      // theta_f is Theta in row-major, Theta is (n+m) x n
      Vec delta = Vec::Zero(n);
      for (int i = 0; i < n + m; ++i) {
        delta += v[i] * theta_f.segment(i * n, n);
      }
      out = x + spec_.dt * delta;
      break;
    }
    case DynamicsKind::kIcnnResidual: {
      const int w = spec_.icnn_widths[0];
      const IcnnParams p = IcnnParams::unpack(n + m, w, n, theta_f);
      Vec v(n + m);
      v << x, u;
      out = x + spec_.dt * icnn_forward(p, v);
      break;
    }
    case DynamicsKind::kAnalytic: {
      if (!analytic_step_) {
        throw ConfigError("analytic dynamics used without a step callback");
      }
      out = analytic_step_(x, u);
      if (out.size() != n) {
        throw DimensionMismatch("analytic step returned wrong state size");
      }
      break;
    }
  }
  if (!all_finite(out)) {
    throw NonFiniteEvaluation("dynamics_step produced NaN/Inf");
  }
  return out;
}

DynEval Model::dynamics_derivs(const Vec& theta_f, const Vec& x,
                               const Vec& u) const {
  check_xu(x, u);
  if (theta_f.size() != df_) {
    throw DimensionMismatch("dynamics_derivs: theta_f has wrong size");
  }
  const int n = spec_.n, m = spec_.m;
  DynEval ev;
  switch (spec_.dynamics_kind) {
    case DynamicsKind::kLinearEuler: {
      Vec v(n + m);
      v << x, u;
      Mat theta(n + m, n);
      for (int i = 0; i < n + m; ++i) theta.row(i) = theta_f.segment(i * n, n);
      ev.x_next = x + spec_.dt * theta.transpose() * v;
      ev.fx = Mat::Identity(n, n) + spec_.dt * theta.topRows(n).transpose();
      ev.fu = spec_.dt * theta.bottomRows(m).transpose();
      ev.fvv.assign(n, Mat::Zero(n + m, n + m));
      ev.fth = Mat::Zero(n, df_);
      for (int k = 0; k < n; ++k) {
        for (int i = 0; i < n + m; ++i) ev.fth(k, i * n + k) = spec_.dt * v[i];
      }
      ev.fthv.assign(n, Mat::Zero(n + m, df_));
      for (int k = 0; k < n; ++k) {
        for (int pcoord = 0; pcoord < n + m; ++pcoord) {
          ev.fthv[k](pcoord, pcoord * n + k) = spec_.dt;
        }
      }
      break;
    }
    case DynamicsKind::kIcnnResidual: {
      const int w = spec_.icnn_widths[0];
      const IcnnParams p = IcnnParams::unpack(n + m, w, n, theta_f);
      Vec v(n + m);
      v << x, u;
      const IcnnEval ie = icnn_eval(p, v, true);
      ev.x_next = x + spec_.dt * ie.y;
      ev.fx = Mat::Identity(n, n) + spec_.dt * ie.dv.leftCols(n);
      ev.fu = spec_.dt * ie.dv.rightCols(m);
      ev.fvv.resize(n);
      ev.fthv.resize(n);
      for (int k = 0; k < n; ++k) {
        ev.fvv[k] = spec_.dt * ie.dvv[k];
        ev.fthv[k] = spec_.dt * ie.dtheta_dv[k];
      }
      ev.fth = spec_.dt * ie.dtheta;
      break;
    }
    case DynamicsKind::kAnalytic: {
      if (!analytic_step_) {
        throw ConfigError("analytic dynamics used without a step callback");
      }
      Vec v(n + m);
      v << x, u;
      auto step_v = [&](const Vec& vv) {
        return analytic_step_(vv.head(n), vv.tail(m));
      };
      ev.x_next = analytic_step_(x, u);
      const Mat J = numkit::fd_jacobian(step_v, v);
      ev.fx = J.leftCols(n);
      ev.fu = J.rightCols(m);
      ev.fvv.resize(n);
      for (int k = 0; k < n; ++k) {
        auto comp = [&](const Vec& vv) { return step_v(vv)[k]; };
        ev.fvv[k] = numkit::fd_hessian(comp, v);
      }
      ev.fth = Mat(n, 0);
      ev.fthv.assign(n, Mat(n + m, 0));
      break;
    }
  }
  if (!all_finite(ev.x_next) || !all_finite(ev.fx) || !all_finite(ev.fu) ||
      !all_finite(ev.fth)) {
    throw NonFiniteEvaluation("dynamics_derivs produced NaN/Inf");
  }
  return ev;
}

jsonio::json spec_to_json(const ModelSpec& spec) {
  jsonio::json j;
  j["n"] = spec.n;
  j["m"] = spec.m;
  j["H"] = spec.H;
  j["cost_kind"] = to_string(spec.cost_kind);
  j["dynamics_kind"] = to_string(spec.dynamics_kind);
  j["dt"] = spec.dt;
  j["icnn_widths"] = spec.icnn_widths;
  j["x_goal"] = jsonio::vec_to_json(spec.goal());
  j["terminal_fixed"] = spec.terminal_fixed;
  return j;
}

ModelSpec spec_from_json(const jsonio::json& j) {
  static const std::vector<std::string> known = {
      "n", "m", "H", "cost_kind", "dynamics_kind",
      "dt", "icnn_widths", "x_goal", "terminal_fixed"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(known.begin(), known.end(), it.key()) == known.end()) {
      throw ConfigError("unknown key '" + it.key() + "' in model spec");
    }
  }
  ModelSpec spec;
  try {
    spec.n = j.at("n").get<int>();
    spec.m = j.at("m").get<int>();
    spec.H = j.at("H").get<int>();
    if (j.contains("cost_kind")) {
      spec.cost_kind = cost_kind_from_string(j.at("cost_kind").get<std::string>());
    }
    if (j.contains("dynamics_kind")) {
      spec.dynamics_kind =
          dynamics_kind_from_string(j.at("dynamics_kind").get<std::string>());
    }
    if (j.contains("dt")) spec.dt = j.at("dt").get<double>();
    if (j.contains("icnn_widths")) {
      spec.icnn_widths = j.at("icnn_widths").get<std::vector<int>>();
    }
    if (j.contains("x_goal")) spec.x_goal = jsonio::vec_from_json(j.at("x_goal"));
    if (j.contains("terminal_fixed")) {
      spec.terminal_fixed = j.at("terminal_fixed").get<bool>();
    }
  } catch (const jsonio::json::exception& e) {
    throw ConfigError(std::string("malformed model spec: ") + e.what());
  }
  spec.validate();
  return spec;
}

jsonio::json params_to_json(const ModelSpec& spec, const PolicyParams& p) {
  jsonio::json j;
  j["spec"] = spec_to_json(spec);
  j["theta_c"] = jsonio::vec_to_json(p.theta_c);
  j["theta_H"] = jsonio::vec_to_json(p.theta_H);
  j["theta_f"] = jsonio::vec_to_json(p.theta_f);
  return j;
}

std::pair<ModelSpec, PolicyParams> params_from_json(const jsonio::json& j) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (it.key() != "spec" && it.key() != "theta_c" && it.key() != "theta_H" &&
        it.key() != "theta_f") {
      throw ConfigError("unknown key '" + it.key() + "' in params document");
    }
  }
  if (!j.contains("spec")) throw ConfigError("params document missing 'spec'");
  const ModelSpec spec = spec_from_json(j.at("spec"));
  PolicyParams p;
  p.theta_c = jsonio::vec_from_json(j.value("theta_c", jsonio::json::array()));
  p.theta_H = jsonio::vec_from_json(j.value("theta_H", jsonio::json::array()));
  p.theta_f = jsonio::vec_from_json(j.value("theta_f", jsonio::json::array()));
  const Model model(spec);
  if (p.theta_c.size() != model.dim_theta_c() ||
      p.theta_H.size() != model.dim_theta_H() ||
      p.theta_f.size() != model.dim_theta_f()) {
    throw ConfigError("params document block sizes do not match spec");
  }
  return {spec, p};
}

void save_params(const std::string& path, const ModelSpec& spec,
                 const PolicyParams& p) {
  jsonio::write_json_file(path, params_to_json(spec, p));
}

std::pair<ModelSpec, PolicyParams> load_params(const std::string& path) {
  return params_from_json(jsonio::read_json_file(path));
}

}  // namespace diffop::models
