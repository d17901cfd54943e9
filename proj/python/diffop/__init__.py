# Copyright 2026 The diffop authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#      https://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Trajectory-optimization policies trained by policy gradients.

The compiled core exposes the planning solver, the implicit policy
gradient, the truncated-Gaussian policy head, the simulated environments,
and the training loop. ``crosscheck`` wraps the JSON report of the C++
route comparison as a dict.
"""

import json as _json

from ._core import (
    ConfigError,
    DomainError,
    Env,
    EnvSpec,
    Model,
    ModelSpec,
    OutOfSupport,
    SolverCfg,
    SolverFailure,
    StochasticCfg,
    TheoryConstants,
    TrainCfg,
    crosscheck_json,
    fd_grad_resolve,
    fit_initial_params,
    grad_kkt,
    log_prob,
    make_env,
    nonconvexity_cost,
    optimal_baseline,
    rollout,
    sample_action,
    score,
    solve_plan,
    theory_constants,
    train,
    unrolled_cost,
)

__all__ = [
    "ConfigError",
    "DomainError",
    "Env",
    "EnvSpec",
    "Model",
    "ModelSpec",
    "OutOfSupport",
    "SolverCfg",
    "SolverFailure",
    "StochasticCfg",
    "TheoryConstants",
    "TrainCfg",
    "crosscheck",
    "crosscheck_json",
    "fd_grad_resolve",
    "fit_initial_params",
    "grad_kkt",
    "log_prob",
    "make_env",
    "nonconvexity_cost",
    "optimal_baseline",
    "rollout",
    "sample_action",
    "score",
    "solve_plan",
    "theory_constants",
    "train",
    "unrolled_cost",
]

__version__ = "0.1.0"


def crosscheck(model, theta, x_init, u_lower=None, u_upper=None, cfg=None,
               with_fd=True):
    """Compares every applicable gradient route; returns the report dict."""
    import numpy as np

    lower = np.asarray([] if u_lower is None else u_lower, dtype=float)
    upper = np.asarray([] if u_upper is None else u_upper, dtype=float)
    if cfg is None:
        cfg = SolverCfg()
    return _json.loads(
        crosscheck_json(model, theta, x_init, lower, upper, cfg, with_fd))
