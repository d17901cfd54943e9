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

#include <cstdint>
#include <string>
#include <vector>

#include "diffop/jsonio.hpp"
#include "diffop/train.hpp"

namespace diffop::harness {

/// Process exit codes, used exhaustively by every command.
inline constexpr int kOk = 0;        ///< success
inline constexpr int kFailure = 1;   ///< assertion or tolerance breach
inline constexpr int kBadConfig = 2; ///< malformed configuration

/// Parsed command line. Commands read their detailed settings from the JSON
/// config; flags override file values.
struct CliOptions {
  std::string command;
  std::string config_path;      ///< empty: all defaults
  std::string out_dir = "out";
  bool has_seed = false;
  std::uint64_t seed = 0;       ///< applied when has_seed
  bool has_repeats = false;
  int repeats = 5;
  bool has_trials = false;
  int trials = 20;
  bool measure = false;
};

/// Dispatches to the command and maps library errors to exit codes:
/// ConfigError -> 2, everything else thrown -> 1.
int run(const CliOptions& opts);

int cmd_train(const CliOptions& opts);
int cmd_gradcheck(const CliOptions& opts);
int cmd_nonconvexity(const CliOptions& opts);
int cmd_theory(const CliOptions& opts);
int cmd_rollout(const CliOptions& opts);

/// Reads the config file, or returns an empty object for an empty path.
/// Throws ConfigError on unreadable files or non-object documents.
jsonio::json load_config(const std::string& path);

/// Fixed CSV schema shared by the per-seed and aggregate training logs.
std::string csv_header();
std::string csv_row(int iter, double mean_cost, double p20, double p80,
                    double grad_norm, double wall_time_s);

/// The Jensen-violation instance evaluated by cmd_nonconvexity: the
/// deterministic episode cost C(theta) for theta = (cost weight on x^2,
/// cost weight on u^2, internal state coefficient, internal input
/// coefficient), on the scalar plant x_next = x - 0.5 u with true stage
/// cost x^2 + u^2, six steps from x = 5.
double nonconvexity_cost(const Vec& theta4);

}  // namespace diffop::harness
