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

#include "diffop/train.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <limits>
#include <thread>
#include <utility>

#include "diffop/errors.hpp"
#include "diffop/implicit.hpp"

namespace diffop::train {

namespace {

// Dedicated counter-RNG streams; large tags so they never collide with
// iteration indices used by training rollouts.
constexpr std::uint64_t kDataStream = 0x64617461;     // dynamics-fit inputs
constexpr std::uint64_t kInitStream = 0x696e6974;     // network weight init
constexpr std::uint64_t kMeasureStream = 0x6d656173;  // constant measurement

constexpr int kFitTrajectories = 20;

int resolve_threads(int requested, int batch) {
  int t = requested;
  if (t <= 0) {
    if (const char* s = std::getenv("DIFFOP_THREADS")) {
      t = std::atoi(s);
    }
  }
  if (t <= 0) t = static_cast<int>(std::thread::hardware_concurrency());
  if (t <= 0) t = 1;
  return std::min(t, std::max(batch, 1));
}

void check_model_env(const models::Model& model, const envs::Env& env) {
  if (model.n() != env.spec.n || model.m() != env.spec.m) {
    throw DimensionMismatch("model dimensions (" + std::to_string(model.n()) +
                            ", " + std::to_string(model.m()) +
                            ") do not match the environment (" +
                            std::to_string(env.spec.n) + ", " +
                            std::to_string(env.spec.m) + ")");
  }
}

std::string context_of(int k, int n, int t) {
  return "iteration " + std::to_string(k) + ", trajectory " +
         std::to_string(n) + ", step " + std::to_string(t);
}

// Runs the batch for one iteration. Worker threads pull indices from a
// shared counter; every result lands in its own slot so the later ordered
// reduction is schedule independent. Library errors mark the slot invalid.
std::vector<Trajectory> run_batch(const envs::Env& env,
                                  const models::Model& model, const Vec& theta,
                                  const TrainCfg& cfg, int k) {
  std::vector<Trajectory> out(cfg.N);
  std::atomic<int> next{0};
  auto body = [&]() {
    for (;;) {
      const int n = next.fetch_add(1);
      if (n >= cfg.N) return;
      try {
        out[n] = rollout(env, model, theta, cfg, k, n);
      } catch (const Error& e) {
        Trajectory t;
        t.k = k;
        t.n = n;
        t.valid = false;
        t.failure = e.what();
        out[n] = std::move(t);
      }
    }
  };
  const int workers = resolve_threads(cfg.threads, cfg.N);
  if (workers <= 1) {
    body();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) pool.emplace_back(body);
    for (auto& th : pool) th.join();
  }
  return out;
}

void write_checkpoint(const TrainCfg& cfg, const models::Model& model,
                      const Vec& theta, const std::string& stem) {
  if (cfg.checkpoint_dir.empty()) return;
  std::filesystem::create_directories(cfg.checkpoint_dir);
  models::save_params(cfg.checkpoint_dir + "/" + stem + ".json", model.spec(),
                      model.unpack(theta));
}

std::string checkpoint_stem(int k) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "checkpoint_%06d", k);
  return buf;
}

double spectral_norm(const Mat& a) {
  if (a.rows() == 0 || a.cols() == 0) return 0.0;
  Eigen::JacobiSVD<Mat> svd(a);
  return svd.singularValues()(0);
}

}  // namespace

void TrainCfg::validate() const {
  if (K < 0) throw ConfigError("TrainCfg: K must be >= 0");
  if (N < 1) throw ConfigError("TrainCfg: N must be >= 1");
  if (T < 1) throw ConfigError("TrainCfg: T must be >= 1");
  if (!(eta >= 0.0) || !std::isfinite(eta)) {
    throw ConfigError("TrainCfg: eta must be finite and >= 0");
  }
  if (checkpoint_every < 1) {
    throw ConfigError("TrainCfg: checkpoint_every must be >= 1");
  }
  stochastic.validate();
  spec.validate();
}

double percentile(std::vector<double> xs, double p) {
  if (xs.empty()) throw DomainError("percentile: empty sample");
  if (!(p >= 0.0 && p <= 1.0)) {
    throw DomainError("percentile: p must lie in [0, 1]");
  }
  std::sort(xs.begin(), xs.end());
  const double pos = p * static_cast<double>(xs.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = static_cast<std::size_t>(std::ceil(pos));
  const double frac = pos - static_cast<double>(lo);
  return xs[lo] + frac * (xs[hi] - xs[lo]);
}

Trajectory rollout(const envs::Env& env, const models::Model& model,
                   const Vec& theta, const TrainCfg& cfg, int k, int n) {
  check_model_env(model, env);
  if (theta.size() != model.dim_theta()) {
    throw DimensionMismatch("rollout: theta has size " +
                            std::to_string(theta.size()) + ", expected " +
                            std::to_string(model.dim_theta()));
  }
  if (k < 0 || n < 0) throw DomainError("rollout: k and n must be >= 0");
  if (cfg.T < 1) throw ConfigError("rollout: T must be >= 1");

  const int T = cfg.T;
  const int nx = env.spec.n;
  const int m = env.spec.m;
  const ocp::BoundProblem pb = ocp::bind(model, theta);
  const ocp::ConstraintSpec unconstrained;

  Trajectory tr;
  tr.k = k;
  tr.n = n;
  tr.states.resize(T + 1, nx);
  tr.actions.resize(T, m);
  tr.plan_means.resize(T, m);
  tr.jacobians.reserve(T);
  tr.stage_costs.resize(T);

  Vec x = env.spec.x_init;
  ocp::SolverCfg scfg = cfg.solver;
  for (int t = 0; t < T; ++t) {
    tr.states.row(t) = x.transpose();
    ocp::PlanSolution plan;
    try {
      plan = ocp::solve_plan(pb, x, unconstrained, scfg);
    } catch (const Error& e) {
      throw SolverFailure(std::string(e.what()) + " (at " +
                          context_of(k, n, t) + ")");
    }
    if (!plan.converged) {
      throw SolverFailure("plan solve did not converge at " +
                          context_of(k, n, t));
    }
    scfg.warm_start = plan.u_flat();

    const Vec u_star = plan.actions.row(0).transpose();
    const implicit::KktBlocks kb =
        implicit::build_kkt_blocks(pb, x, plan, unconstrained);
    tr.jacobians.push_back(implicit::grad_kkt(kb).du0);
    tr.plan_means.row(t) = u_star.transpose();

    Vec u = u_star;
    if (cfg.stochastic.sigma > 0.0) {
      policy::CounterRng rng = policy::CounterRng::keyed(
          cfg.stochastic.seed, static_cast<std::uint64_t>(k),
          static_cast<std::uint64_t>(n), static_cast<std::uint64_t>(t));
      u = policy::sample_action(u_star, cfg.stochastic, rng);
    }
    tr.actions.row(t) = u.transpose();
    tr.stage_costs[t] = env.cost(x, u);
    x = env.step(x, u);
  }
  tr.states.row(T) = x.transpose();
  tr.total_cost = tr.stage_costs.sum();
  if (!std::isfinite(tr.total_cost)) {
    throw NonFiniteEvaluation("rollout: episode cost is not finite at " +
                              context_of(k, n, T - 1));
  }
  return tr;
}

Vec estimate_gradient(const std::vector<Trajectory>& trajs, double sigma,
                      bool subtract_mean) {
  if (!(sigma > 0.0)) {
    throw DomainError("estimate_gradient: sigma must be positive");
  }
  std::vector<const Trajectory*> valid;
  valid.reserve(trajs.size());
  for (const auto& t : trajs) {
    if (t.valid) valid.push_back(&t);
  }
  if (valid.empty()) {
    throw NoValidTrajectories(
        "estimate_gradient: every trajectory in the batch is invalid");
  }
  const auto d = valid.front()->jacobians.empty()
                     ? Eigen::Index{0}
                     : valid.front()->jacobians.front().cols();
  double base = 0.0;
  if (subtract_mean) {
    for (const auto* t : valid) base += t->total_cost;
    base /= static_cast<double>(valid.size());
  }
  Vec g = Vec::Zero(d);
  for (const auto* t : valid) {
    const auto T = t->actions.rows();
    if (static_cast<Eigen::Index>(t->jacobians.size()) != T) {
      throw DimensionMismatch(
          "estimate_gradient: jacobian count differs from action count");
    }
    Vec s = Vec::Zero(d);
    for (Eigen::Index i = 0; i < T; ++i) {
      s += policy::score(t->jacobians[static_cast<std::size_t>(i)],
                         t->actions.row(i).transpose(),
                         t->plan_means.row(i).transpose(), sigma);
    }
    g += (t->total_cost - base) * s;
  }
  return g / static_cast<double>(valid.size());
}

TrainResult train(const envs::Env& env, const TrainCfg& cfg) {
  cfg.validate();
  const models::Model model(cfg.spec);
  check_model_env(model, env);

  Vec theta;
  if (cfg.theta0.size() > 0) {
    if (cfg.theta0.size() != model.dim_theta()) {
      throw DimensionMismatch("train: theta0 has size " +
                              std::to_string(cfg.theta0.size()) +
                              ", expected " +
                              std::to_string(model.dim_theta()));
    }
    theta = cfg.theta0;
  } else {
    theta = fit_initial_params(env, model, cfg);
  }

  TrainResult res;
  res.history.reserve(static_cast<std::size_t>(cfg.K));
  for (int k = 0; k < cfg.K; ++k) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<Trajectory> batch = run_batch(env, model, theta, cfg, k);

    int failed = 0;
    std::vector<double> costs;
    costs.reserve(batch.size());
    for (const auto& tr : batch) {
      if (tr.valid) {
        costs.push_back(tr.total_cost);
      } else {
        ++failed;
      }
    }
    res.total_failed += failed;
    if (2 * failed > cfg.N) {
      write_checkpoint(cfg, model, theta, "checkpoint_abort");
      std::string first;
      for (const auto& tr : batch) {
        if (!tr.valid) {
          first = tr.failure;
          break;
        }
      }
      throw SolverFailure("training aborted at iteration " +
                          std::to_string(k) + ": " + std::to_string(failed) +
                          " of " + std::to_string(cfg.N) +
                          " rollouts failed; first failure: " + first);
    }

    const Vec g = estimate_gradient(batch, cfg.stochastic.sigma, cfg.baseline);

    IterationRecord rec;
    rec.k = k;
    rec.valid = cfg.N - failed;
    rec.failed = failed;
    rec.mean_cost = 0.0;
    for (const double c : costs) rec.mean_cost += c;
    rec.mean_cost /= static_cast<double>(costs.size());
    rec.p20 = percentile(costs, 0.20);
    rec.p80 = percentile(costs, 0.80);
    rec.grad_norm = g.norm();
    rec.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    res.history.push_back(rec);

    theta -= cfg.eta * g;
    if (!all_finite(theta)) {
      throw NonFiniteEvaluation(
          "train: parameters left the finite range after iteration " +
          std::to_string(k));
    }
    if ((k + 1) % cfg.checkpoint_every == 0) {
      write_checkpoint(cfg, model, theta, checkpoint_stem(k + 1));
    }
  }
  write_checkpoint(cfg, model, theta, "params_final");
  res.theta = theta;
  return res;
}

Vec fit_initial_params(const envs::Env& env, const models::Model& model,
                       const TrainCfg& cfg) {
  check_model_env(model, env);
  models::PolicyParams p = model.default_params();
  const int df = model.dim_theta_f();
  if (df == 0 ||
      model.spec().dynamics_kind == models::DynamicsKind::kAnalytic) {
    return model.pack(p);
  }

  const int n = env.spec.n;
  const int m = env.spec.m;
  const int rows = kFitTrajectories * cfg.T;
  Mat V(rows, n + m);   // stacked (x, u) inputs
  Mat Y(rows, n);       // state increments divided by the model step
  int r = 0;
  for (int traj = 0; traj < kFitTrajectories; ++traj) {
    Vec x = env.spec.x_init;
    for (int t = 0; t < cfg.T; ++t) {
      policy::CounterRng rng = policy::CounterRng::keyed(
          cfg.stochastic.seed, kDataStream, static_cast<std::uint64_t>(traj),
          static_cast<std::uint64_t>(t));
      Vec u(m);
      for (int j = 0; j < m; ++j) {
        u[j] = env.spec.action_scale * (2.0 * rng.next_uniform01() - 1.0);
      }
      const Vec xn = env.step(x, u);
      V.row(r).head(n) = x.transpose();
      V.row(r).tail(m) = u.transpose();
      Y.row(r) = ((xn - x) / model.spec().dt).transpose();
      ++r;
      x = xn;
    }
  }

  switch (model.spec().dynamics_kind) {
    case models::DynamicsKind::kLinearEuler: {
      const Mat theta_mat = V.colPivHouseholderQr().solve(Y);  // (n+m) x n
      Vec thf(df);
      for (int i = 0; i < n + m; ++i) {
        thf.segment(i * n, n) = theta_mat.row(i).transpose();
      }
      p.theta_f = thf;
      break;
    }
    case models::DynamicsKind::kIcnnResidual: {
      const int hidden = model.spec().icnn_widths[0];
      Vec th(df);
      for (int i = 0; i < df; ++i) {
        policy::CounterRng rng = policy::CounterRng::keyed(
            cfg.stochastic.seed, kInitStream, 0,
            static_cast<std::uint64_t>(i));
        th[i] = 0.2 * (2.0 * rng.next_uniform01() - 1.0);
      }
      // Mean squared residual of the network against the scaled increments,
      // with its analytic parameter gradient.
      auto loss_grad = [&](const Vec& cand, Vec* grad) -> double {
        const models::IcnnParams ip =
            models::IcnnParams::unpack(n + m, hidden, n, cand);
        double loss = 0.0;
        if (grad) grad->setZero(df);
        for (int s = 0; s < rows; ++s) {
          const Vec v = V.row(s).transpose();
          const models::IcnnEval ev =
              models::icnn_eval(ip, v, grad != nullptr);
          const Vec e = ev.y - Y.row(s).transpose();
          loss += e.squaredNorm();
          if (grad) *grad += 2.0 * ev.dtheta.transpose() * e;
        }
        loss /= static_cast<double>(rows);
        if (grad) *grad /= static_cast<double>(rows);
        return loss;
      };
      double lr = 0.05;
      Vec grad(df);
      double loss = loss_grad(th, &grad);
      for (int it = 0; it < 400; ++it) {
        const Vec th_try = th - lr * grad;
        Vec grad_try(df);
        const double loss_try = loss_grad(th_try, &grad_try);
        if (loss_try <= loss) {
          th = th_try;
          grad = grad_try;
          loss = loss_try;
          lr *= 1.1;
        } else {
          lr *= 0.5;
          if (lr < 1e-12) break;
        }
      }
      p.theta_f = th;
      break;
    }
    case models::DynamicsKind::kAnalytic:
      break;
  }
  return model.pack(p);
}

TheoryConstants theory_constants(double mu, double L1, double L2, double L3,
                                 double M, int m, double beta, double sigma,
                                 int T) {
  const bool ok = mu > 0.0 && L1 > 0.0 && L2 > 0.0 && L3 > 0.0 && M > 0.0 &&
                  m >= 1 && beta > 0.0 && sigma > 0.0 && T >= 1;
  if (!ok) {
    throw DomainError("theory_constants: every constant must be positive");
  }
  TheoryConstants c;
  c.mu = mu;
  c.L1 = L1;
  c.L2 = L2;
  c.L3 = L3;
  c.M = M;
  c.m = m;
  c.beta = beta;
  c.sigma = sigma;
  c.T = T;
  const double md = static_cast<double>(m);
  const double Td = static_cast<double>(T);
  const double planning = std::sqrt(md) * beta * Td *
                          (L2 * mu * mu + L1 * L2 * mu + L1 * L3 * mu +
                           L1 * L1 * L3) /
                          (mu * mu * mu);
  const double score_term = L1 * L1 * Td / (mu * mu * sigma * sigma);
  const double excursion = md * beta * beta * L1 * L1 * Td * Td / (mu * mu);
  c.L_C = M * (planning + score_term + excursion);
  c.eta_rec = 1.0 / (4.0 * c.L_C);
  return c;
}

double TheoryConstants::sample_size(double eps, double K, double d,
                                    double nu) const {
  if (!(eps > 0.0)) throw DomainError("sample_size: eps must be positive");
  if (!(K >= 1.0)) throw DomainError("sample_size: K must be >= 1");
  if (!(d >= 1.0)) throw DomainError("sample_size: d must be >= 1");
  if (!(nu > 0.0 && nu < 1.0)) {
    throw DomainError("sample_size: nu must lie in (0, 1)");
  }
  const double md = static_cast<double>(m);
  const double Td = static_cast<double>(T);
  return 2.0 * md * beta * beta * M * M * Td * Td * L1 * L1 /
         (eps * eps * mu * mu) * std::log(2.0 * K * d / nu);
}

MeasuredConstants measure_constants(const envs::Env& env,
                                    const models::Model& model,
                                    const Vec& theta, const TrainCfg& cfg,
                                    int rollouts) {
  check_model_env(model, env);
  if (rollouts < 1) {
    throw DomainError("measure_constants: rollouts must be >= 1");
  }
  const ocp::BoundProblem pb = ocp::bind(model, theta);
  const ocp::ConstraintSpec unconstrained;

  MeasuredConstants out;
  out.mu_hat = std::numeric_limits<double>::infinity();
  for (int r = 0; r < rollouts; ++r) {
    Vec x = env.spec.x_init;
    double total = 0.0;
    ocp::SolverCfg scfg = cfg.solver;
    for (int t = 0; t < cfg.T; ++t) {
      const ocp::PlanSolution plan =
          ocp::solve_plan(pb, x, unconstrained, scfg);
      if (!plan.converged) {
        throw SolverFailure("measure_constants: plan solve did not converge");
      }
      scfg.warm_start = plan.u_flat();
      const ocp::UnrolledDerivs ud =
          ocp::unrolled_derivs(pb, x, plan.u_flat(), true);
      const Eigen::SelfAdjointEigenSolver<Mat> eig(ud.hess);
      out.mu_hat = std::min(out.mu_hat, eig.eigenvalues().minCoeff());
      out.L1_hat = std::max(out.L1_hat, spectral_norm(ud.mixed));

      Vec u = plan.actions.row(0).transpose();
      if (cfg.stochastic.sigma > 0.0) {
        policy::CounterRng rng = policy::CounterRng::keyed(
            cfg.stochastic.seed, kMeasureStream, static_cast<std::uint64_t>(r),
            static_cast<std::uint64_t>(t));
        u = policy::sample_action(u, cfg.stochastic, rng);
      }
      total += env.cost(x, u);
      x = env.step(x, u);
    }
    out.M_hat = std::max(out.M_hat, std::abs(total));
  }
  return out;
}

}  // namespace diffop::train
