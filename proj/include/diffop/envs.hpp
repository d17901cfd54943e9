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

// Ground-truth simulated systems: cartpole, two-link robot arm, and
// quadrotor, all Euler-discretized, with their true stage costs and an
// optimal-cost baseline computed by solving the full-episode plan against
// the true dynamics. Environments are value types; copies step in parallel
// with no shared state.

#include <functional>
#include <map>
#include <string>

#include <json.hpp>

#include "diffop/ocp.hpp"
#include "diffop/types.hpp"

namespace diffop::envs {

struct EnvState {
  Vec x;
  int t = 0;
};

/// Static description of a system: dimensions, discretization, physical
/// constants by name, cost parameters, goal, and default initial state.
struct EnvSpec {
  std::string name;
  int n = 0, m = 0;
  double dt = 0.05;
  int T = 20;  // episode steps
  std::map<std::string, double> phys;
  Vec q_weights;  // cartpole per-coordinate state weights
  Mat Q;          // robot arm state cost matrix
  Mat R;          // control cost, m x m (1 x 1 for the cartpole)
  Vec alpha;      // quadrotor cost coefficients alpha_1..alpha_4
  Vec x_goal;
  Vec x_init;
  double action_scale = 1.0;

  double p(const std::string& key) const;  // ConfigError when absent
};

/// A simulated system: the spec it was built from plus pure step and stage
/// cost closures. The closures capture the spec at construction; build a
/// fresh env to change parameters.
struct Env {
  EnvSpec spec;
  std::function<Vec(const Vec& x, const Vec& u)> step;
  std::function<double(const Vec& x, const Vec& u)> cost;
};

/// One Euler step of the cartpole with state (y, phi, ydot, phidot) and a
/// scalar force input.
EnvState cartpole_step(const EnvState& s, double force, const EnvSpec& spec);

/// One Euler step of the two-link arm with state (q1, q2, q1dot, q2dot) and
/// joint torques. Angles are measured from the downward vertical, so zero
/// torque at the origin is the stable equilibrium.
EnvState robotarm_step(const EnvState& s, const Vec& u, const EnvSpec& spec);

/// One Euler step of the quadrotor with state (p, v, quat, w) and four rotor
/// thrusts; the quaternion is renormalized after every step.
EnvState quadrotor_step(const EnvState& s, const Vec& thrusts,
                        const EnvSpec& spec);

/// The environment's true stage cost at (x, u).
double true_cost(const Env& env, const Vec& x, const Vec& u);

/// Default-parameter environments by name: "cartpole", "robotarm",
/// "quadrotor". The JSON overload applies overrides (dt, T, x_goal, x_init,
/// phys.*, q_weights, Q, R, alpha, action_scale) and rejects unknown keys.
Env make_env(const std::string& name);
Env make_env(const std::string& name, const nlohmann::json& overrides);

/// The env's true dynamics and cost wrapped as a parameterless planning
/// problem over `horizon` steps (zero terminal term); derivatives by
/// central differences.
ocp::BoundProblem baseline_problem(const Env& env, int horizon);

/// Cost achieved with perfect model knowledge: solves the full-episode plan
/// on the true system and returns the realized rollout cost. Throws
/// SolverFailure when the plan solve does not converge under cfg.
double optimal_baseline(const Env& env, int horizon,
                        const ocp::SolverCfg& cfg);

}  // namespace diffop::envs
