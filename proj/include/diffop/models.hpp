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

#include <functional>
#include <string>
#include <vector>

#include "diffop/jsonio.hpp"
#include "diffop/types.hpp"

namespace diffop::models {

enum class CostKind { kQuadratic, kIcnn };
enum class DynamicsKind { kLinearEuler, kIcnnResidual, kAnalytic };

std::string to_string(CostKind k);
std::string to_string(DynamicsKind k);
CostKind cost_kind_from_string(const std::string& s);
DynamicsKind dynamics_kind_from_string(const std::string& s);

/// Floor added to L L^T so the control penalty stays uniformly positive
/// definite for every parameter value.
inline constexpr double kRMin = 1e-3;

/// Structural description of a policy's internal planning problem. Parameter
/// vector sizes are fully determined by this struct.
struct ModelSpec {
  int n = 0;  ///< state dimension
  int m = 0;  ///< action dimension
  int H = 1;  ///< planning horizon (number of actions)
  CostKind cost_kind = CostKind::kQuadratic;
  DynamicsKind dynamics_kind = DynamicsKind::kLinearEuler;
  double dt = 0.05;
  /// Hidden widths of the convex network; exactly one hidden layer is
  /// supported.
  std::vector<int> icnn_widths = {4};
  /// Target state the cost measures distance to. Empty means zeros(n).
  Vec x_goal;
  /// With true, the terminal cost is identically zero and theta_H is empty.
  bool terminal_fixed = false;

  /// Raises ConfigError on inconsistent fields.
  void validate() const;
  Vec goal() const;
};

/// Learnable parameters, stored per block. Flat order is
/// theta_c, then theta_H, then theta_f.
struct PolicyParams {
  Vec theta_c;
  Vec theta_H;
  Vec theta_f;
};

/// Input-convex network with a single hidden layer. The hidden-to-output
/// weights are squares of free parameters so they stay nonnegative, which
/// together with convex nondecreasing activations makes every output convex
/// in the input. Softplus is applied at the hidden layer and the output, so
/// all-zero parameters evaluate to softplus(0) = ln 2 per output.
struct IcnnParams {
  Mat W0;      ///< hidden x in
  Vec b0;      ///< hidden
  Mat Wz_hat;  ///< out x hidden, reparameterized weights
  Mat Wv;      ///< out x in, input passthrough
  Vec b1;      ///< out

  static int param_count(int in, int hidden, int out);
  /// Layout: W0 row-major, b0, Wz_hat row-major, Wv row-major, b1.
  static IcnnParams unpack(int in, int hidden, int out, const Vec& theta);
  Vec pack() const;
};

Vec icnn_forward(const IcnnParams& p, const Vec& v);

/// Full evaluation of the network with analytic derivatives.
struct IcnnEval {
  Vec y;                      ///< out
  Mat dv;                     ///< out x in
  std::vector<Mat> dvv;       ///< per output, in x in
  Mat dtheta;                 ///< out x d
  std::vector<Mat> dtheta_dv; ///< per output, in x d
};
IcnnEval icnn_eval(const IcnnParams& p, const Vec& v, bool with_param_derivs);

/// Finite-difference twin of icnn_eval with identical output layout; exists
/// so the analytic derivatives can be validated behind the same interface.
IcnnEval icnn_eval_fd(const IcnnParams& p, const Vec& v,
                      bool with_param_derivs);

/// Stage cost value with first and second derivatives. cth holds the mixed
/// parameter derivative of the stacked (x, u) gradient, rows x then u.
struct StageEval {
  double c = 0.0;
  Vec cx, cu;
  Mat cxx, cuu, cxu;  // cxu is n x m
  Mat cth;            // (n+m) x d_c
};

struct TerminalEval {
  double c = 0.0;
  Vec cx;
  Mat cxx;
  Mat cth;  // n x d_H
};

/// One dynamics step with derivatives. fvv[k] is the Hessian of output k in
/// the stacked (x, u) input; fthv[k] the mixed parameter derivative of the
/// gradient of output k.
struct DynEval {
  Vec x_next;
  Mat fx, fu;
  std::vector<Mat> fvv;   // n of (n+m) x (n+m)
  Mat fth;                // n x d_f
  std::vector<Mat> fthv;  // n of (n+m) x d_f
};

/// Immutable evaluator for one ModelSpec. All methods are const and safe to
/// call concurrently.
class Model {
 public:
  explicit Model(ModelSpec spec);

  const ModelSpec& spec() const { return spec_; }
  int n() const { return spec_.n; }
  int m() const { return spec_.m; }
  int horizon() const { return spec_.H; }

  int dim_theta_c() const { return dc_; }
  int dim_theta_H() const { return dH_; }
  int dim_theta_f() const { return df_; }
  int dim_theta() const { return dc_ + dH_ + df_; }

  Vec pack(const PolicyParams& p) const;
  PolicyParams unpack(const Vec& theta) const;
  /// Identity-scaled cost weights and zero dynamics parameters.
  PolicyParams default_params() const;

  double stage_cost(const Vec& theta_c, const Vec& x, const Vec& u) const;
  StageEval stage_cost_derivs(const Vec& theta_c, const Vec& x,
                              const Vec& u) const;
  double terminal_cost(const Vec& theta_H, const Vec& x) const;
  TerminalEval terminal_cost_derivs(const Vec& theta_H, const Vec& x) const;
  Vec dynamics_step(const Vec& theta_f, const Vec& x, const Vec& u) const;
  DynEval dynamics_derivs(const Vec& theta_f, const Vec& x,
                          const Vec& u) const;

  /// Attaches the step map used by the analytic dynamics kind. Derivatives
  /// of the callback are taken by central differences.
  void set_analytic_step(std::function<Vec(const Vec&, const Vec&)> step);

 private:
  ModelSpec spec_;
  int dc_ = 0, dH_ = 0, df_ = 0;
  std::function<Vec(const Vec&, const Vec&)> analytic_step_;

  void check_xu(const Vec& x, const Vec& u) const;
};

/// Serialization of a parameter set together with its spec:
/// {"spec": {...}, "theta_c": [...], "theta_H": [...], "theta_f": [...]}.
/// Floats carry 17 significant digits.
jsonio::json spec_to_json(const ModelSpec& spec);
ModelSpec spec_from_json(const jsonio::json& j);
jsonio::json params_to_json(const ModelSpec& spec, const PolicyParams& p);
std::pair<ModelSpec, PolicyParams> params_from_json(const jsonio::json& j);
void save_params(const std::string& path, const ModelSpec& spec,
                 const PolicyParams& p);
std::pair<ModelSpec, PolicyParams> load_params(const std::string& path);

}  // namespace diffop::models
