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

#include <CLI11.hpp>
#include <string>

#include "diffop/harness.hpp"

namespace {

// Shared flags; every subcommand reads the same option set, and each command
// ignores the flags it has no use for.
void add_common(CLI::App* sub, diffop::harness::CliOptions* opts) {
  sub->add_option("--config", opts->config_path,
                  "JSON configuration file (defaults apply when omitted)");
  sub->add_option("--out", opts->out_dir, "output directory")
      ->capture_default_str();
  auto* seed = sub->add_option("--seed", opts->seed,
                               "overrides the seed from the config file");
  auto* repeats =
      sub->add_option("--repeats", opts->repeats, "independent seeds to run")
          ->capture_default_str();
  auto* trials =
      sub->add_option("--trials", opts->trials, "random instances to check")
          ->capture_default_str();
  sub->add_flag("--measure", opts->measure,
                "also estimate the constants empirically");
  sub->parse_complete_callback([opts, seed, repeats, trials]() {
    opts->has_seed = seed->count() > 0;
    opts->has_repeats = repeats->count() > 0;
    opts->has_trials = trials->count() > 0;
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "diffop: trajectory-optimization policies trained by policy gradients"};
  app.require_subcommand(1);

  diffop::harness::CliOptions opts;
  const char* commands[] = {"train", "gradcheck", "nonconvexity", "theory",
                            "rollout"};
  const char* descriptions[] = {
      "policy-gradient training runs with per-seed and aggregate CSV logs",
      "cross-checks every policy-gradient route on random instances",
      "evaluates the fixed Jensen-violation instance of the objective",
      "prints smoothness and sample-size constants from the closed forms",
      "writes one trajectory as JSON lines"};
  for (int i = 0; i < 5; ++i) {
    CLI::App* sub = app.add_subcommand(commands[i], descriptions[i]);
    add_common(sub, &opts);
    sub->callback([&opts, i, commands]() { opts.command = commands[i]; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : diffop::harness::kBadConfig;
  }
  return diffop::harness::run(opts);
}
