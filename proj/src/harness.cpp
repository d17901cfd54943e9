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

#include "diffop/harness.hpp"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "diffop/envs.hpp"
#include "diffop/errors.hpp"
#include "diffop/implicit.hpp"
#include "diffop/models.hpp"
#include "diffop/ocp.hpp"
#include "diffop/policy.hpp"

namespace diffop::harness {

namespace {

using jsonio::json;

constexpr std::uint64_t kGradcheckStream = 0x67726364;

void require_object(const json& j, const std::string& where) {
  if (!j.is_object()) {
    throw ConfigError(where + " must be a JSON object");
  }
}

void require_keys(const json& j, const std::vector<std::string>& allowed,
                  const std::string& where) {
  require_object(j, where);
  for (const auto& item : j.items()) {
    bool known = false;
    for (const auto& k : allowed) {
      if (item.key() == k) {
        known = true;
        break;
      }
    }
    if (!known) {
      throw ConfigError("unknown key '" + item.key() + "' in " + where);
    }
  }
}

double get_num(const json& j, const char* key, double def) {
  if (!j.contains(key)) return def;
  if (!j[key].is_number()) {
    throw ConfigError(std::string("key '") + key + "' must be a number");
  }
  return j[key].get<double>();
}

int get_int(const json& j, const char* key, int def) {
  if (!j.contains(key)) return def;
  if (!j[key].is_number_integer()) {
    throw ConfigError(std::string("key '") + key + "' must be an integer");
  }
  return j[key].get<int>();
}

std::uint64_t get_u64(const json& j, const char* key, std::uint64_t def) {
  if (!j.contains(key)) return def;
  if (!j[key].is_number_integer() ||
      (j[key].is_number_integer() && !j[key].is_number_unsigned() &&
       j[key].get<long long>() < 0)) {
    throw ConfigError(std::string("key '") + key +
                      "' must be a nonnegative integer");
  }
  return j[key].get<std::uint64_t>();
}

bool get_bool(const json& j, const char* key, bool def) {
  if (!j.contains(key)) return def;
  if (!j[key].is_boolean()) {
    throw ConfigError(std::string("key '") + key + "' must be a boolean");
  }
  return j[key].get<bool>();
}

std::string get_str(const json& j, const char* key, const std::string& def) {
  if (!j.contains(key)) return def;
  if (!j[key].is_string()) {
    throw ConfigError(std::string("key '") + key + "' must be a string");
  }
  return j[key].get<std::string>();
}

json block_of(const json& cfg, const char* key) {
  if (!cfg.contains(key)) return json::object();
  require_object(cfg[key], std::string("'") + key + "'");
  return cfg[key];
}

envs::Env env_from(const json& holder) {
  const std::string name = get_str(holder, "env", "cartpole");
  const json ovr = block_of(holder, "env_overrides");
  if (ovr.empty()) return envs::make_env(name);
  return envs::make_env(name, ovr);
}

models::ModelSpec model_from(const json& holder, const envs::Env& env) {
  const json mb = block_of(holder, "model");
  require_keys(mb, {"cost", "dynamics", "H", "dt", "icnn_widths",
                    "terminal_fixed"},
               "'model'");
  models::ModelSpec sp;
  sp.n = env.spec.n;
  sp.m = env.spec.m;
  sp.H = get_int(mb, "H", 3);
  sp.dt = get_num(mb, "dt", env.spec.dt);
  sp.cost_kind = models::cost_kind_from_string(get_str(mb, "cost",
                                                       "quadratic"));
  const std::string dyn = get_str(mb, "dynamics", "linear_euler");
  if (dyn == "analytic") {
    throw ConfigError(
        "model.dynamics: 'analytic' needs a programmatic step callback and "
        "cannot be configured from a file");
  }
  sp.dynamics_kind = models::dynamics_kind_from_string(dyn);
  if (mb.contains("icnn_widths")) {
    if (!mb["icnn_widths"].is_array()) {
      throw ConfigError("model.icnn_widths must be an array of integers");
    }
    sp.icnn_widths.clear();
    for (const auto& w : mb["icnn_widths"]) {
      if (!w.is_number_integer()) {
        throw ConfigError("model.icnn_widths must be an array of integers");
      }
      sp.icnn_widths.push_back(w.get<int>());
    }
  }
  sp.terminal_fixed = get_bool(mb, "terminal_fixed", false);
  sp.x_goal = env.spec.x_goal;
  sp.validate();
  return sp;
}

ocp::SolverCfg solver_from(const json& holder) {
  const json sb = block_of(holder, "solver");
  require_keys(sb, {"grad_tol", "max_iters", "armijo_c"}, "'solver'");
  ocp::SolverCfg cfg;
  cfg.grad_tol = get_num(sb, "grad_tol", cfg.grad_tol);
  cfg.max_iters = get_int(sb, "max_iters", cfg.max_iters);
  cfg.armijo_c = get_num(sb, "armijo_c", cfg.armijo_c);
  if (!(cfg.grad_tol > 0.0)) {
    throw ConfigError("solver.grad_tol must be positive");
  }
  if (cfg.max_iters < 1) throw ConfigError("solver.max_iters must be >= 1");
  return cfg;
}

/// Stochastic policy settings with harness-level defaults: sigma is 10% of
/// the environment's action scale and beta = 3/sigma, which puts the
/// truncation half-width beta sigma^2 at three standard deviations.
policy::StochasticCfg stochastic_from(const json& blk, const envs::Env& env,
                                      bool allow_zero_sigma) {
  policy::StochasticCfg sc;
  sc.sigma = get_num(blk, "sigma", 0.1 * env.spec.action_scale);
  if (!(sc.sigma >= 0.0) || (!allow_zero_sigma && sc.sigma == 0.0)) {
    throw ConfigError("sigma must be positive");
  }
  sc.beta = get_num(blk, "beta", sc.sigma > 0.0 ? 3.0 / sc.sigma : 3.0);
  sc.seed = get_u64(blk, "seed", 0);
  const std::string rule = get_str(blk, "truncation", "beta_sigma_sq");
  if (rule == "beta_sigma_sq") {
    sc.rule = policy::TruncationRule::kBetaSigmaSq;
  } else if (rule == "beta_sigma") {
    sc.rule = policy::TruncationRule::kBetaSigma;
  } else {
    throw ConfigError(
        "truncation must be 'beta_sigma_sq' or 'beta_sigma', got '" + rule +
        "'");
  }
  if (sc.sigma > 0.0) sc.validate();
  return sc;
}

/// Parameters from either a saved params file or an inline flat vector.
Vec theta_from(const json& holder, const models::Model& model,
               bool required) {
  const bool has_file = holder.contains("params");
  const bool has_inline = holder.contains("theta0");
  if (has_file && has_inline) {
    throw ConfigError("give either 'params' or 'theta0', not both");
  }
  if (has_file) {
    const std::string path = get_str(holder, "params", "");
    const auto [sp, pp] = models::load_params(path);
    const auto& want = model.spec();
    const bool same = sp.n == want.n && sp.m == want.m && sp.H == want.H &&
                      sp.cost_kind == want.cost_kind &&
                      sp.dynamics_kind == want.dynamics_kind &&
                      sp.terminal_fixed == want.terminal_fixed;
    if (!same) {
      throw ConfigError("params file '" + path +
                        "' was saved for a different model spec");
    }
    return model.pack(pp);
  }
  if (has_inline) {
    if (!holder["theta0"].is_array()) {
      throw ConfigError("theta0 must be a flat array of numbers");
    }
    const Vec th = jsonio::vec_from_json(holder["theta0"]);
    if (th.size() != model.dim_theta()) {
      throw ConfigError("theta0 has length " + std::to_string(th.size()) +
                        ", model expects " +
                        std::to_string(model.dim_theta()));
    }
    return th;
  }
  if (required) {
    throw ConfigError(
        "config requires 'params' (file path) or 'theta0' (flat array)");
  }
  return Vec();
}

void write_text(const std::string& path, const std::string& content) {
  std::ofstream ofs(path, std::ios::binary);
  if (!ofs) throw Error("cannot open '" + path + "' for writing");
  ofs << content;
  if (!ofs.good()) throw Error("failed while writing '" + path + "'");
}

std::string seed_csv_name(std::uint64_t seed) {
  return "train_seed" + std::to_string(seed) + ".csv";
}

json error_report(const std::string& kind, const std::string& what) {
  json j;
  j["error"] = kind;
  j["what"] = what;
  return j;
}

}  // namespace

jsonio::json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  json j;
  try {
    j = jsonio::read_json_file(path);
  } catch (const std::exception& e) {
    throw ConfigError("cannot read config '" + path + "': " + e.what());
  }
  if (!j.is_object()) {
    throw ConfigError("config root must be a JSON object");
  }
  return j;
}

std::string csv_header() { return "iter,mean_cost,p20,p80,grad_norm,wall_time_s"; }

std::string csv_row(int iter, double mean_cost, double p20, double p80,
                    double grad_norm, double wall_time_s) {
  std::string s = std::to_string(iter);
  for (const double v : {mean_cost, p20, p80, grad_norm, wall_time_s}) {
    s += ",";
    s += jsonio::fmt_g17(v);
  }
  return s;
}

int run(const CliOptions& opts) {
  try {
    if (opts.command == "train") return cmd_train(opts);
    if (opts.command == "gradcheck") return cmd_gradcheck(opts);
    if (opts.command == "nonconvexity") return cmd_nonconvexity(opts);
    if (opts.command == "theory") return cmd_theory(opts);
    if (opts.command == "rollout") return cmd_rollout(opts);
    throw ConfigError("unknown command '" + opts.command + "'");
  } catch (const ConfigError& e) {
    std::cerr << jsonio::dump(error_report("config", e.what()), -1) << "\n";
    return kBadConfig;
  } catch (const Error& e) {
    std::cerr << jsonio::dump(error_report("runtime", e.what()), -1) << "\n";
    return kFailure;
  } catch (const std::exception& e) {
    std::cerr << jsonio::dump(error_report("internal", e.what()), -1) << "\n";
    return kFailure;
  }
}

int cmd_train(const CliOptions& opts) {
  const json cfg = load_config(opts.config_path);
  require_keys(cfg,
               {"env", "env_overrides", "model", "train", "solver", "params",
                "theta0", "timing"},
               "train config");
  const envs::Env env = env_from(cfg);
  const json tb = block_of(cfg, "train");
  require_keys(tb,
               {"K", "N", "eta", "T", "sigma", "beta", "truncation", "seed",
                "baseline", "threads", "checkpoint_every"},
               "'train'");

  train::TrainCfg tc;
  tc.K = get_int(tb, "K", 100);
  tc.N = get_int(tb, "N", 10);
  tc.eta = get_num(tb, "eta", 0.01);
  tc.T = get_int(tb, "T", env.spec.T);
  tc.stochastic = stochastic_from(tb, env, /*allow_zero_sigma=*/false);
  tc.solver = solver_from(cfg);
  tc.env = env.spec.name;
  tc.spec = model_from(cfg, env);
  tc.baseline = get_bool(tb, "baseline", false);
  tc.threads = get_int(tb, "threads", 0);
  tc.checkpoint_every = get_int(tb, "checkpoint_every", 10);

  const std::string timing = get_str(cfg, "timing", "none");
  if (timing != "none" && timing != "wall") {
    throw ConfigError("timing must be 'none' or 'wall', got '" + timing +
                      "'");
  }
  const bool wall = timing == "wall";

  const models::Model model(tc.spec);
  tc.theta0 = theta_from(cfg, model, /*required=*/false);
  tc.validate();

  const std::uint64_t seed0 =
      opts.has_seed ? opts.seed : tc.stochastic.seed;
  const int repeats = opts.has_repeats ? opts.repeats : 5;
  if (repeats < 1) throw ConfigError("repeats must be >= 1");

  std::filesystem::create_directories(opts.out_dir);

  std::vector<std::vector<train::IterationRecord>> histories;
  std::vector<std::uint64_t> seeds;
  for (int rep = 0; rep < repeats; ++rep) {
    train::TrainCfg tr = tc;
    tr.stochastic.seed = seed0 + static_cast<std::uint64_t>(rep);
    tr.checkpoint_dir =
        opts.out_dir + "/checkpoints_seed" + std::to_string(tr.stochastic.seed);
    const train::TrainResult res = train::train(env, tr);

    std::string csv = csv_header() + "\n";
    for (const auto& r : res.history) {
      csv += csv_row(r.k, r.mean_cost, r.p20, r.p80, r.grad_norm,
                     wall ? r.wall_time_s : 0.0) +
             "\n";
    }
    write_text(opts.out_dir + "/" + seed_csv_name(tr.stochastic.seed), csv);
    histories.push_back(res.history);
    seeds.push_back(tr.stochastic.seed);
  }

  const double baseline = envs::optimal_baseline(env, tc.T, tc.solver);

  // Aggregate across seeds: mean and 20/80 percentiles of the per-seed mean
  // costs at each iteration, then the optimal-baseline row with iter = -1.
  std::string agg = csv_header() + "\n";
  for (int k = 0; k < tc.K; ++k) {
    std::vector<double> means;
    double gnorm = 0.0, walls = 0.0;
    means.reserve(histories.size());
    for (const auto& h : histories) {
      means.push_back(h[static_cast<std::size_t>(k)].mean_cost);
      gnorm += h[static_cast<std::size_t>(k)].grad_norm;
      walls += h[static_cast<std::size_t>(k)].wall_time_s;
    }
    double mean = 0.0;
    for (const double v : means) mean += v;
    mean /= static_cast<double>(means.size());
    agg += csv_row(k, mean, train::percentile(means, 0.20),
                   train::percentile(means, 0.80),
                   gnorm / static_cast<double>(histories.size()),
                   wall ? walls / static_cast<double>(histories.size()) : 0.0) +
           "\n";
  }
  agg += csv_row(-1, baseline, baseline, baseline, 0.0, 0.0) + "\n";
  write_text(opts.out_dir + "/train_aggregate.csv", agg);

  json summary;
  summary["command"] = "train";
  summary["env"] = env.spec.name;
  summary["K"] = tc.K;
  summary["N"] = tc.N;
  summary["T"] = tc.T;
  summary["repeats"] = repeats;
  summary["seeds"] = seeds;
  summary["baseline"] = baseline;
  if (tc.K > 0) {
    std::vector<double> first, last;
    for (const auto& h : histories) {
      first.push_back(h.front().mean_cost);
      last.push_back(h.back().mean_cost);
    }
    double f = 0.0, l = 0.0;
    for (const double v : first) f += v;
    for (const double v : last) l += v;
    summary["initial_mean_cost"] = f / static_cast<double>(first.size());
    summary["final_mean_cost"] = l / static_cast<double>(last.size());
  }
  jsonio::write_json_file(opts.out_dir + "/train_summary.json", summary);

  std::cout << "train: wrote " << repeats << " seed CSVs and "
            << "train_aggregate.csv under " << opts.out_dir
            << " (baseline " << jsonio::fmt_g17(baseline) << ")\n";
  return kOk;
}

namespace {

struct GradcheckInstance {
  models::ModelSpec spec;
  Vec theta;
  Vec x_init;
  ocp::ConstraintSpec cons;
};

GradcheckInstance make_instance(const std::string& family, std::uint64_t seed,
                                int trial) {
  policy::CounterRng rng = policy::CounterRng::keyed(
      seed, kGradcheckStream, static_cast<std::uint64_t>(trial), 0);
  auto uni = [&rng](double lo, double hi) {
    return lo + (hi - lo) * rng.next_uniform01();
  };

  GradcheckInstance inst;
  models::ModelSpec sp;
  if (family == "lqr" || family == "boxed-lqr") {
    sp.n = 2 + static_cast<int>(std::floor(uni(0.0, 3.0)));
    sp.m = 1 + static_cast<int>(std::floor(uni(0.0, 2.0)));
    sp.H = 3;
    sp.dt = 0.1;
    sp.cost_kind = models::CostKind::kQuadratic;
    sp.dynamics_kind = models::DynamicsKind::kLinearEuler;
  } else if (family == "cartpole-icnn") {
    sp.n = 4;
    sp.m = 1;
    sp.H = 3;
    sp.dt = 0.05;
    sp.cost_kind = models::CostKind::kQuadratic;
    sp.dynamics_kind = models::DynamicsKind::kIcnnResidual;
    sp.icnn_widths = {4};
  } else {
    throw ConfigError("unknown gradcheck family '" + family +
                      "' (expected lqr | cartpole-icnn | boxed-lqr)");
  }
  sp.validate();
  inst.spec = sp;

  const models::Model model(sp);
  models::PolicyParams p = model.default_params();
  for (int j = 0; j < sp.n; ++j) p.theta_c[j] = uni(0.6, 1.4);
  for (int a = 0; a < sp.m; ++a) {
    for (int b = 0; b < sp.m; ++b) {
      p.theta_c[sp.n + a * sp.m + b] =
          (a == b) ? uni(0.5, 1.0) : uni(-0.2, 0.2);
    }
  }
  for (int j = 0; j < model.dim_theta_H(); ++j) p.theta_H[j] = uni(0.5, 1.5);
  const double df_scale =
      sp.dynamics_kind == models::DynamicsKind::kLinearEuler ? 0.5 : 0.3;
  for (int j = 0; j < model.dim_theta_f(); ++j) {
    p.theta_f[j] = uni(-df_scale, df_scale);
  }
  inst.theta = model.pack(p);

  const double x_scale = family == "cartpole-icnn" ? 0.5 : 2.0;
  inst.x_init.resize(sp.n);
  for (int j = 0; j < sp.n; ++j) inst.x_init[j] = uni(-x_scale, x_scale);

  if (family == "boxed-lqr") {
    const double b = uni(0.05, 0.3);
    inst.cons.u_lower = Vec::Constant(sp.m, -b);
    inst.cons.u_upper = Vec::Constant(sp.m, b);
  }
  return inst;
}

json instance_to_json(const std::string& family, std::uint64_t seed,
                      int trial, const GradcheckInstance& inst) {
  json j;
  j["family"] = family;
  j["seed"] = seed;
  j["trial"] = trial;
  j["spec"] = models::spec_to_json(inst.spec);
  j["theta"] = jsonio::vec_to_json(inst.theta);
  j["x_init"] = jsonio::vec_to_json(inst.x_init);
  if (inst.cons.u_lower.size() > 0) {
    j["u_lower"] = jsonio::vec_to_json(inst.cons.u_lower);
    j["u_upper"] = jsonio::vec_to_json(inst.cons.u_upper);
  }
  return j;
}

}  // namespace

int cmd_gradcheck(const CliOptions& opts) {
  const json cfg = load_config(opts.config_path);
  require_keys(cfg, {"family", "trials", "tol_analytic", "tol_fd", "seed",
                     "solver"},
               "gradcheck config");
  const std::string family = get_str(cfg, "family", "lqr");
  const int trials =
      opts.has_trials ? opts.trials : get_int(cfg, "trials", 20);
  if (trials < 1) throw ConfigError("trials must be >= 1");
  const double tol_analytic = get_num(cfg, "tol_analytic", 1e-6);
  const double tol_fd = get_num(cfg, "tol_fd", 1e-4);
  const std::uint64_t seed =
      opts.has_seed ? opts.seed : get_u64(cfg, "seed", 0);
  const ocp::SolverCfg scfg = solver_from(cfg);

  double worst_analytic = 0.0;
  double worst_fd = 0.0;
  bool ok = true;
  json offender;

  for (int trial = 0; trial < trials; ++trial) {
    GradcheckInstance inst = make_instance(family, seed, trial);
    models::Model model(inst.spec);

    // Retune box bounds away from weakly active solutions; differentiation
    // is set-valued exactly on the boundary, so such instances are not fair
    // probes of any route.
    if (family == "boxed-lqr") {
      for (int attempt = 0; attempt < 20; ++attempt) {
        const ocp::BoundProblem pb = ocp::bind(model, inst.theta);
        const ocp::PlanSolution plan =
            ocp::solve_plan(pb, inst.x_init, inst.cons, scfg);
        if (plan.converged && !plan.weakly_active) break;
        inst.cons.u_lower *= 0.8;
        inst.cons.u_upper *= 0.8;
      }
    }

    const implicit::GradReport rep = implicit::crosscheck(
        model, inst.theta, inst.x_init, inst.cons, scfg, /*with_fd=*/true);

    bool breach = !rep.reliable;
    for (const auto& pr : rep.pairs) {
      const bool analytic_pair =
          pr.a.find("fd") == std::string::npos &&
          pr.b.find("fd") == std::string::npos;
      if (analytic_pair) {
        worst_analytic = std::max(worst_analytic, pr.rel_err);
        if (pr.rel_err > tol_analytic) breach = true;
      } else {
        worst_fd = std::max(worst_fd, pr.rel_err);
        if (pr.rel_err > tol_fd) breach = true;
      }
    }
    if (breach && ok) {
      ok = false;
      offender = instance_to_json(family, seed, trial, inst);
      offender["report"] = rep.to_json();
    }
  }

  std::cout << "gradcheck[" << family << "]: trials=" << trials
            << " worst analytic rel err=" << jsonio::fmt_g17(worst_analytic)
            << " (tol " << jsonio::fmt_g17(tol_analytic) << ")"
            << " worst fd rel err=" << jsonio::fmt_g17(worst_fd) << " (tol "
            << jsonio::fmt_g17(tol_fd) << ")\n";

  if (!ok) {
    std::filesystem::create_directories(opts.out_dir);
    const std::string path = opts.out_dir + "/gradcheck_failure.json";
    jsonio::write_json_file(path, offender);
    std::cout << "gradcheck: tolerance breach; offending instance written to "
              << path << "\n";
    return kFailure;
  }
  return kOk;
}

double nonconvexity_cost(const Vec& theta4) {
  if (theta4.size() != 4) {
    throw DimensionMismatch("nonconvexity_cost: theta must have 4 entries");
  }
  if (!(theta4[0] >= 0.0)) {
    throw DomainError("nonconvexity_cost: the x^2 weight must be >= 0");
  }
  if (!(theta4[1] > models::kRMin)) {
    throw DomainError(
        "nonconvexity_cost: the u^2 weight must exceed the control floor");
  }

  envs::Env env;
  env.spec.name = "scalar-double-integrator";
  env.spec.n = 1;
  env.spec.m = 1;
  env.spec.dt = 1.0;
  env.spec.T = 6;
  env.spec.x_init = Vec::Constant(1, 5.0);
  env.spec.x_goal = Vec::Zero(1);
  env.spec.action_scale = 1.0;
  env.step = [](const Vec& x, const Vec& u) {
    Vec out(1);
    out[0] = x[0] - 0.5 * u[0];
    return out;
  };
  env.cost = [](const Vec& x, const Vec& u) {
    return x[0] * x[0] + u[0] * u[0];
  };

  models::ModelSpec sp;
  sp.n = 1;
  sp.m = 1;
  sp.H = 6;
  sp.dt = 1.0;
  sp.cost_kind = models::CostKind::kQuadratic;
  sp.dynamics_kind = models::DynamicsKind::kLinearEuler;
  sp.terminal_fixed = true;
  sp.validate();
  const models::Model model(sp);

  // theta4 = (x^2 weight, u^2 weight, internal state coefficient a,
  // internal input coefficient b). The quadratic family stores the square
  // root of the state weight and the Cholesky factor above the control
  // floor; the one-step linear family stores (a - 1, b) because it adds the
  // identity.
  models::PolicyParams p;
  p.theta_c = Vec(2);
  p.theta_c[0] = std::sqrt(theta4[0]);
  p.theta_c[1] = std::sqrt(theta4[1] - models::kRMin);
  p.theta_H = Vec(0);
  p.theta_f = Vec(2);
  p.theta_f[0] = theta4[2] - 1.0;
  p.theta_f[1] = theta4[3];

  train::TrainCfg tc;
  tc.T = env.spec.T;
  tc.stochastic.sigma = 0.0;  // deterministic rollout, mean actions applied
  tc.spec = sp;
  const train::Trajectory tr =
      train::rollout(env, model, model.pack(p), tc, 0, 0);
  return tr.total_cost;
}

int cmd_nonconvexity(const CliOptions& opts) {
  const json cfg = load_config(opts.config_path);
  require_keys(cfg, {}, "nonconvexity config");

  Vec t1(4), t2(4);
  t1 << 1.0, 1.0, 2.0, -0.5;
  t2 << 2.0, 1.0, 2.0, -0.5;
  const Vec tm = 0.5 * t1 + 0.5 * t2;

  const double c1 = nonconvexity_cost(t1);
  const double c2 = nonconvexity_cost(t2);
  const double cm = nonconvexity_cost(tm);
  const double combo = 0.5 * c1 + 0.5 * c2;

  std::cout << "C(theta1) = " << jsonio::fmt_g17(c1) << "\n";
  std::cout << "C(theta2) = " << jsonio::fmt_g17(c2) << "\n";
  std::cout << "C(midpoint) = " << jsonio::fmt_g17(cm) << "\n";
  std::cout << "0.5 C(theta1) + 0.5 C(theta2) = " << jsonio::fmt_g17(combo)
            << "\n";
  if (cm > combo) {
    std::cout << "nonconvexity: midpoint cost exceeds the chord; the "
                 "objective is not convex in theta\n";
    return kOk;
  }
  std::cout << "nonconvexity: inequality failed\n";
  return kFailure;
}

int cmd_theory(const CliOptions& opts) {
  const json cfg = load_config(opts.config_path);
  require_keys(cfg, {"constants", "query", "measure"}, "theory config");

  const json cb = block_of(cfg, "constants");
  require_keys(cb, {"mu", "L1", "L2", "L3", "M", "m", "beta", "sigma", "T"},
               "'constants'");
  const double mu = get_num(cb, "mu", 1.0);
  const double L1 = get_num(cb, "L1", 1.0);
  const double L2 = get_num(cb, "L2", 1.0);
  const double L3 = get_num(cb, "L3", 1.0);
  const double M = get_num(cb, "M", 1.0);
  const int m = get_int(cb, "m", 1);
  const double beta = get_num(cb, "beta", 1.0);
  const double sigma = get_num(cb, "sigma", 1.0);
  const int T = get_int(cb, "T", 1);

  const json qb = block_of(cfg, "query");
  require_keys(qb, {"eps", "K", "d", "nu"}, "'query'");
  const double eps = get_num(qb, "eps", 0.1);
  const double K = get_num(qb, "K", 100.0);
  const double d = get_num(qb, "d", 4.0);
  const double nu = get_num(qb, "nu", 0.05);

  const train::TheoryConstants tc =
      train::theory_constants(mu, L1, L2, L3, M, m, beta, sigma, T);
  std::cout << "L_C = " << jsonio::fmt_g17(tc.L_C) << "\n";
  std::cout << "eta_rec = " << jsonio::fmt_g17(tc.eta_rec) << "\n";
  std::cout << "N(eps=" << jsonio::fmt_g17(eps) << ", K="
            << jsonio::fmt_g17(K) << ", d=" << jsonio::fmt_g17(d)
            << ", nu=" << jsonio::fmt_g17(nu)
            << ") = " << jsonio::fmt_g17(tc.sample_size(eps, K, d, nu))
            << "\n";

  if (opts.measure) {
    const json mb = block_of(cfg, "measure");
    require_keys(mb,
                 {"env", "env_overrides", "model", "sigma", "beta",
                  "truncation", "seed", "T", "rollouts", "solver", "params",
                  "theta0"},
                 "'measure'");
    const envs::Env env = env_from(mb);
    const models::ModelSpec sp = model_from(mb, env);
    const models::Model model(sp);

    train::TrainCfg mtc;
    mtc.T = get_int(mb, "T", env.spec.T);
    mtc.stochastic = stochastic_from(mb, env, /*allow_zero_sigma=*/true);
    if (opts.has_seed) mtc.stochastic.seed = opts.seed;
    mtc.solver = solver_from(mb);
    mtc.spec = sp;

    Vec theta = theta_from(mb, model, /*required=*/false);
    if (theta.size() == 0) {
      theta = train::fit_initial_params(env, model, mtc);
    }
    const int rollouts = get_int(mb, "rollouts", 3);
    const train::MeasuredConstants mc =
        train::measure_constants(env, model, theta, mtc, rollouts);
    std::cout << "mu_hat = " << jsonio::fmt_g17(mc.mu_hat) << "\n";
    std::cout << "L1_hat = " << jsonio::fmt_g17(mc.L1_hat) << "\n";
    std::cout << "M_hat = " << jsonio::fmt_g17(mc.M_hat) << "\n";
    const train::TheoryConstants tm = train::theory_constants(
        mc.mu_hat, mc.L1_hat, L2, L3, mc.M_hat, model.m(), beta,
        mtc.stochastic.sigma > 0.0 ? mtc.stochastic.sigma : sigma, mtc.T);
    std::cout << "measured L_C = " << jsonio::fmt_g17(tm.L_C) << "\n";
    std::cout << "measured eta_rec = " << jsonio::fmt_g17(tm.eta_rec) << "\n";
    std::cout << "measured N(eps=" << jsonio::fmt_g17(eps)
              << ", K=" << jsonio::fmt_g17(K) << ", d=" << jsonio::fmt_g17(d)
              << ", nu=" << jsonio::fmt_g17(nu)
              << ") = " << jsonio::fmt_g17(tm.sample_size(eps, K, d, nu))
              << "\n";
  }
  return kOk;
}

int cmd_rollout(const CliOptions& opts) {
  const json cfg = load_config(opts.config_path);
  require_keys(cfg, {"env", "env_overrides", "model", "params", "theta0",
                     "rollout", "solver"},
               "rollout config");
  const envs::Env env = env_from(cfg);
  const models::ModelSpec sp = model_from(cfg, env);
  const models::Model model(sp);

  const json rb = block_of(cfg, "rollout");
  require_keys(rb, {"T", "sigma", "beta", "truncation", "seed", "k", "n"},
               "'rollout'");

  train::TrainCfg tc;
  tc.T = get_int(rb, "T", env.spec.T);
  if (tc.T < 1) throw ConfigError("rollout.T must be >= 1");
  tc.stochastic = stochastic_from(rb, env, /*allow_zero_sigma=*/true);
  if (opts.has_seed) tc.stochastic.seed = opts.seed;
  tc.solver = solver_from(cfg);
  tc.spec = sp;
  const int k = get_int(rb, "k", 0);
  const int n = get_int(rb, "n", 0);

  const Vec theta = theta_from(cfg, model, /*required=*/true);

  const train::Trajectory tr = train::rollout(env, model, theta, tc, k, n);

  std::string lines;
  for (int t = 0; t < tc.T; ++t) {
    json row;
    row["t"] = t;
    row["x"] = jsonio::vec_to_json(tr.states.row(t).transpose());
    row["u_star"] = jsonio::vec_to_json(tr.plan_means.row(t).transpose());
    row["u"] = jsonio::vec_to_json(tr.actions.row(t).transpose());
    row["c"] = tr.stage_costs[t];
    lines += jsonio::dump(row, -1) + "\n";
  }
  json tail;
  tail["T"] = tc.T;
  tail["total_cost"] = tr.total_cost;
  tail["x_final"] = jsonio::vec_to_json(tr.states.row(tc.T).transpose());
  tail["seed"] = tc.stochastic.seed;
  tail["k"] = k;
  tail["n"] = n;
  lines += jsonio::dump(tail, -1) + "\n";

  std::filesystem::create_directories(opts.out_dir);
  const std::string path = opts.out_dir + "/rollout.jsonl";
  write_text(path, lines);
  std::cout << "rollout: T=" << tc.T
            << " total_cost=" << jsonio::fmt_g17(tr.total_cost) << " -> "
            << path << "\n";
  return kOk;
}

}  // namespace diffop::harness
