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

#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstdint>
#include <string>

#include "diffop/envs.hpp"
#include "diffop/errors.hpp"
#include "diffop/harness.hpp"
#include "diffop/implicit.hpp"
#include "diffop/models.hpp"
#include "diffop/ocp.hpp"
#include "diffop/policy.hpp"
#include "diffop/train.hpp"

namespace py = pybind11;

using diffop::Mat;
using diffop::Vec;

namespace {

diffop::ocp::ConstraintSpec box_of(const Vec& lower, const Vec& upper) {
  diffop::ocp::ConstraintSpec cons;
  cons.u_lower = lower;
  cons.u_upper = upper;
  return cons;
}

py::dict plan_to_dict(const diffop::ocp::PlanSolution& plan) {
  py::dict d;
  d["states"] = plan.states;
  d["actions"] = plan.actions;
  d["cost"] = plan.cost;
  d["kkt_residual"] = plan.kkt_residual;
  d["iterations"] = plan.iterations;
  d["converged"] = plan.converged;
  d["nonconvex_detected"] = plan.nonconvex_detected;
  d["weakly_active"] = plan.weakly_active;
  d["active_set"] = plan.active_set;
  return d;
}

py::dict trajectory_to_dict(const diffop::train::Trajectory& tr) {
  py::dict d;
  d["k"] = tr.k;
  d["n"] = tr.n;
  d["states"] = tr.states;
  d["actions"] = tr.actions;
  d["plan_means"] = tr.plan_means;
  d["jacobians"] = tr.jacobians;
  d["stage_costs"] = tr.stage_costs;
  d["total_cost"] = tr.total_cost;
  d["valid"] = tr.valid;
  d["failure"] = tr.failure;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, mod) {
  mod.doc() =
      "Trajectory-optimization policies with implicit policy gradients";

  py::register_exception<diffop::ConfigError>(mod, "ConfigError");
  py::register_exception<diffop::DomainError>(mod, "DomainError");
  py::register_exception<diffop::SolverFailure>(mod, "SolverFailure");
  py::register_exception<diffop::OutOfSupport>(mod, "OutOfSupport");

  py::class_<diffop::models::ModelSpec>(mod, "ModelSpec")
      .def(py::init<>())
      .def_readwrite("n", &diffop::models::ModelSpec::n)
      .def_readwrite("m", &diffop::models::ModelSpec::m)
      .def_readwrite("H", &diffop::models::ModelSpec::H)
      .def_readwrite("dt", &diffop::models::ModelSpec::dt)
      .def_readwrite("icnn_widths", &diffop::models::ModelSpec::icnn_widths)
      .def_readwrite("x_goal", &diffop::models::ModelSpec::x_goal)
      .def_readwrite("terminal_fixed",
                     &diffop::models::ModelSpec::terminal_fixed)
      .def_property(
          "cost",
          [](const diffop::models::ModelSpec& s) {
            return diffop::models::to_string(s.cost_kind);
          },
          [](diffop::models::ModelSpec& s, const std::string& v) {
            s.cost_kind = diffop::models::cost_kind_from_string(v);
          })
      .def_property(
          "dynamics",
          [](const diffop::models::ModelSpec& s) {
            return diffop::models::to_string(s.dynamics_kind);
          },
          [](diffop::models::ModelSpec& s, const std::string& v) {
            s.dynamics_kind = diffop::models::dynamics_kind_from_string(v);
          })
      .def("validate", &diffop::models::ModelSpec::validate);

  py::class_<diffop::models::Model>(mod, "Model")
      .def(py::init<diffop::models::ModelSpec>())
      .def_property_readonly("spec", &diffop::models::Model::spec)
      .def_property_readonly("n", &diffop::models::Model::n)
      .def_property_readonly("m", &diffop::models::Model::m)
      .def_property_readonly("dim_theta", &diffop::models::Model::dim_theta)
      .def_property_readonly("dim_theta_c",
                             &diffop::models::Model::dim_theta_c)
      .def_property_readonly("dim_theta_H",
                             &diffop::models::Model::dim_theta_H)
      .def_property_readonly("dim_theta_f",
                             &diffop::models::Model::dim_theta_f)
      .def("default_theta", [](const diffop::models::Model& model) {
        return model.pack(model.default_params());
      });

  py::class_<diffop::ocp::SolverCfg>(mod, "SolverCfg")
      .def(py::init<>())
      .def_readwrite("grad_tol", &diffop::ocp::SolverCfg::grad_tol)
      .def_readwrite("max_iters", &diffop::ocp::SolverCfg::max_iters)
      .def_readwrite("armijo_c", &diffop::ocp::SolverCfg::armijo_c)
      .def_readwrite("warm_start", &diffop::ocp::SolverCfg::warm_start);

  mod.def(
      "solve_plan",
      [](const diffop::models::Model& model, const Vec& theta,
         const Vec& x_init, const Vec& u_lower, const Vec& u_upper,
         const diffop::ocp::SolverCfg& cfg) {
        return plan_to_dict(diffop::ocp::solve_plan(
            model, theta, x_init, box_of(u_lower, u_upper), cfg));
      },
      py::arg("model"), py::arg("theta"), py::arg("x_init"),
      py::arg("u_lower") = Vec(), py::arg("u_upper") = Vec(),
      py::arg("cfg") = diffop::ocp::SolverCfg{},
      "Solves the internal planning problem at one state.");

  mod.def(
      "unrolled_cost",
      [](const diffop::models::Model& model, const Vec& theta,
         const Vec& x_init, const Vec& u_seq) {
        return diffop::ocp::unrolled_cost(model, theta, x_init, u_seq);
      },
      py::arg("model"), py::arg("theta"), py::arg("x_init"),
      py::arg("u_seq"),
      "Planning objective with the dynamics substituted in.");

  mod.def(
      "grad_kkt",
      [](const diffop::models::Model& model, const Vec& theta,
         const Vec& x_init, const Vec& u_lower, const Vec& u_upper,
         const diffop::ocp::SolverCfg& cfg) {
        const auto cons = box_of(u_lower, u_upper);
        const auto plan =
            diffop::ocp::solve_plan(model, theta, x_init, cons, cfg);
        return diffop::implicit::grad_kkt(model, theta, x_init, plan, cons)
            .du0;
      },
      py::arg("model"), py::arg("theta"), py::arg("x_init"),
      py::arg("u_lower") = Vec(), py::arg("u_upper") = Vec(),
      py::arg("cfg") = diffop::ocp::SolverCfg{},
      "First-action parameter sensitivity from the stationarity system.");

  mod.def(
      "fd_grad_resolve",
      [](const diffop::models::Model& model, const Vec& theta,
         const Vec& x_init, const Vec& u_lower, const Vec& u_upper,
         const diffop::ocp::SolverCfg& cfg, double h) {
        return diffop::implicit::fd_grad_resolve(
            model, theta, x_init, box_of(u_lower, u_upper), cfg, h);
      },
      py::arg("model"), py::arg("theta"), py::arg("x_init"),
      py::arg("u_lower") = Vec(), py::arg("u_upper") = Vec(),
      py::arg("cfg") = diffop::ocp::SolverCfg{}, py::arg("h") = 0.0,
      "Finite-difference oracle through full re-solves.");

  mod.def(
      "crosscheck_json",
      [](const diffop::models::Model& model, const Vec& theta,
         const Vec& x_init, const Vec& u_lower, const Vec& u_upper,
         const diffop::ocp::SolverCfg& cfg, bool with_fd) {
        return diffop::implicit::crosscheck(model, theta, x_init,
                                            box_of(u_lower, u_upper), cfg,
                                            with_fd)
            .to_json()
            .dump();
      },
      py::arg("model"), py::arg("theta"), py::arg("x_init"),
      py::arg("u_lower") = Vec(), py::arg("u_upper") = Vec(),
      py::arg("cfg") = diffop::ocp::SolverCfg{}, py::arg("with_fd") = true,
      "All gradient routes compared pairwise; returns a JSON report.");

  py::class_<diffop::policy::StochasticCfg>(mod, "StochasticCfg")
      .def(py::init<>())
      .def_readwrite("sigma", &diffop::policy::StochasticCfg::sigma)
      .def_readwrite("beta", &diffop::policy::StochasticCfg::beta)
      .def_readwrite("seed", &diffop::policy::StochasticCfg::seed)
      .def_property(
          "truncation",
          [](const diffop::policy::StochasticCfg& c) {
            return c.rule == diffop::policy::TruncationRule::kBetaSigmaSq
                       ? "beta_sigma_sq"
                       : "beta_sigma";
          },
          [](diffop::policy::StochasticCfg& c, const std::string& v) {
            if (v == "beta_sigma_sq") {
              c.rule = diffop::policy::TruncationRule::kBetaSigmaSq;
            } else if (v == "beta_sigma") {
              c.rule = diffop::policy::TruncationRule::kBetaSigma;
            } else {
              throw diffop::ConfigError("unknown truncation rule '" + v +
                                        "'");
            }
          })
      .def_property_readonly("half_width",
                             &diffop::policy::StochasticCfg::half_width);

  mod.def(
      "sample_action",
      [](const Vec& u_star, const diffop::policy::StochasticCfg& cfg,
         std::uint64_t k, std::uint64_t n, std::uint64_t t) {
        auto rng = diffop::policy::CounterRng::keyed(cfg.seed, k, n, t);
        return diffop::policy::sample_action(u_star, cfg, rng);
      },
      py::arg("u_star"), py::arg("cfg"), py::arg("k") = 0, py::arg("n") = 0,
      py::arg("t") = 0,
      "One truncated-Gaussian draw keyed by (seed, k, n, t).");

  mod.def("log_prob", &diffop::policy::log_prob, py::arg("u"),
          py::arg("u_star"), py::arg("cfg"),
          "Exact log-density of the truncated Gaussian policy.");

  mod.def("score", &diffop::policy::score, py::arg("grad_u_star"),
          py::arg("u"), py::arg("u_star"), py::arg("sigma"),
          "Parameter score (1/sigma^2) J^T (u - u_star).");

  py::class_<diffop::envs::EnvSpec>(mod, "EnvSpec")
      .def_readonly("name", &diffop::envs::EnvSpec::name)
      .def_readonly("n", &diffop::envs::EnvSpec::n)
      .def_readonly("m", &diffop::envs::EnvSpec::m)
      .def_readonly("dt", &diffop::envs::EnvSpec::dt)
      .def_readonly("T", &diffop::envs::EnvSpec::T)
      .def_readonly("x_init", &diffop::envs::EnvSpec::x_init)
      .def_readonly("x_goal", &diffop::envs::EnvSpec::x_goal)
      .def_readonly("action_scale", &diffop::envs::EnvSpec::action_scale);

  py::class_<diffop::envs::Env>(mod, "Env")
      .def_readonly("spec", &diffop::envs::Env::spec)
      .def("step",
           [](const diffop::envs::Env& env, const Vec& x, const Vec& u) {
             return env.step(x, u);
           })
      .def("cost",
           [](const diffop::envs::Env& env, const Vec& x, const Vec& u) {
             return env.cost(x, u);
           });

  mod.def(
      "make_env",
      [](const std::string& name, const std::string& overrides_json) {
        if (overrides_json.empty()) return diffop::envs::make_env(name);
        return diffop::envs::make_env(
            name, nlohmann::json::parse(overrides_json));
      },
      py::arg("name"), py::arg("overrides_json") = std::string(),
      "Environment registry: cartpole | robotarm | quadrotor.");

  mod.def("optimal_baseline", &diffop::envs::optimal_baseline,
          py::arg("env"), py::arg("horizon"),
          py::arg("cfg") = diffop::ocp::SolverCfg{},
          "Realized episode cost of planning with the true system.");

  py::class_<diffop::train::TrainCfg>(mod, "TrainCfg")
      .def(py::init<>())
      .def_readwrite("K", &diffop::train::TrainCfg::K)
      .def_readwrite("N", &diffop::train::TrainCfg::N)
      .def_readwrite("eta", &diffop::train::TrainCfg::eta)
      .def_readwrite("T", &diffop::train::TrainCfg::T)
      .def_readwrite("stochastic", &diffop::train::TrainCfg::stochastic)
      .def_readwrite("solver", &diffop::train::TrainCfg::solver)
      .def_readwrite("env", &diffop::train::TrainCfg::env)
      .def_readwrite("spec", &diffop::train::TrainCfg::spec)
      .def_readwrite("theta0", &diffop::train::TrainCfg::theta0)
      .def_readwrite("baseline", &diffop::train::TrainCfg::baseline)
      .def_readwrite("threads", &diffop::train::TrainCfg::threads)
      .def_readwrite("checkpoint_every",
                     &diffop::train::TrainCfg::checkpoint_every)
      .def_readwrite("checkpoint_dir",
                     &diffop::train::TrainCfg::checkpoint_dir);

  mod.def(
      "rollout",
      [](const diffop::envs::Env& env, const diffop::models::Model& model,
         const Vec& theta, const diffop::train::TrainCfg& cfg, int k, int n) {
        return trajectory_to_dict(
            diffop::train::rollout(env, model, theta, cfg, k, n));
      },
      py::arg("env"), py::arg("model"), py::arg("theta"), py::arg("cfg"),
      py::arg("k") = 0, py::arg("n") = 0,
      "One episode with per-step plan re-solves and sensitivities.");

  mod.def(
      "train",
      [](const diffop::envs::Env& env, const diffop::train::TrainCfg& cfg) {
        const diffop::train::TrainResult res = diffop::train::train(env, cfg);
        py::list history;
        for (const auto& r : res.history) {
          py::dict d;
          d["k"] = r.k;
          d["mean_cost"] = r.mean_cost;
          d["p20"] = r.p20;
          d["p80"] = r.p80;
          d["grad_norm"] = r.grad_norm;
          d["wall_time_s"] = r.wall_time_s;
          d["valid"] = r.valid;
          d["failed"] = r.failed;
          history.append(d);
        }
        py::dict out;
        out["history"] = history;
        out["theta"] = res.theta;
        out["total_failed"] = res.total_failed;
        return out;
      },
      py::arg("env"), py::arg("cfg"),
      "Plain policy-gradient training; returns history and final theta.");

  mod.def("fit_initial_params", &diffop::train::fit_initial_params,
          py::arg("env"), py::arg("model"), py::arg("cfg"),
          "Identity cost weights plus a dynamics fit from random inputs.");

  py::class_<diffop::train::TheoryConstants>(mod, "TheoryConstants")
      .def_readonly("L_C", &diffop::train::TheoryConstants::L_C)
      .def_readonly("eta_rec", &diffop::train::TheoryConstants::eta_rec)
      .def("sample_size", &diffop::train::TheoryConstants::sample_size,
           py::arg("eps"), py::arg("K"), py::arg("d"), py::arg("nu"));

  mod.def("theory_constants", &diffop::train::theory_constants,
          py::arg("mu"), py::arg("L1"), py::arg("L2"), py::arg("L3"),
          py::arg("M"), py::arg("m"), py::arg("beta"), py::arg("sigma"),
          py::arg("T"), "Smoothness constant, step size, and sample bound.");

  mod.def("nonconvexity_cost", &diffop::harness::nonconvexity_cost,
          py::arg("theta4"),
          "Episode cost of the fixed scalar Jensen-violation instance.");
}
