/*
 Copyright 2026 The cassm Authors

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

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include "cassm/experiment.hpp"
#include "cassm/model_io.hpp"

namespace {

cassm::ExperimentConfig load_config(const std::string& config_path,
                                    std::optional<std::uint64_t> seed_override,
                                    const std::string& out_override) {
  cassm::ExperimentConfig cfg;
  if (!config_path.empty())
    cfg = cassm::experiment_from_json(cassm::load_json(config_path));
  else
    cfg = cassm::default_experiment();
  if (seed_override) cfg.seed = *seed_override;
  if (!out_override.empty()) {
    cfg.out_dir = out_override;
  } else if (const char* env = std::getenv("CASSM_OUT")) {
    cfg.out_dir = env;
  }
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Control-augmented spectral-submanifold reduced-order modeling workbench"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  app.add_option("--config", config_path, "JSON experiment configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "master seed override");
  app.add_option("--out", out_dir, "output directory (overrides config and CASSM_OUT)");

  auto* collect = app.add_subcommand("collect", "run the decay-based data collection");
  auto* fit = app.add_subcommand("fit", "fit all configured reduced-order models");
  std::string data_dir;
  fit->add_option("--data", data_dir, "directory produced by collect")->required();
  auto* predict = app.add_subcommand("predict", "open-loop random-actuation benchmark");
  std::string models_dir;
  predict->add_option("--models", models_dir, "directory produced by fit")->required();
  auto* track = app.add_subcommand("track", "closed-loop reference tracking with MPC");
  std::string model_path;
  track->add_option("--model", model_path, "model JSON file")->required();
  auto* diagnose = app.add_subcommand("diagnose", "print model diagnostics");
  std::string diag_path;
  bool diag_json = false;
  diagnose->add_option("model", diag_path, "model JSON file")->required();
  diagnose->add_flag("--json", diag_json, "emit JSON");

  CLI11_PARSE(app, argc, argv);

  try {
    if (diagnose->parsed()) return cassm::cmd_diagnose(diag_path, diag_json);

    const cassm::ExperimentConfig cfg = load_config(config_path, seed, out_dir);
    if (collect->parsed()) return cassm::cmd_collect(cfg, cfg.out_dir);
    if (fit->parsed()) return cassm::cmd_fit(cfg, data_dir, cfg.out_dir);
    if (predict->parsed()) return cassm::cmd_predict(cfg, models_dir, cfg.out_dir);
    if (track->parsed()) return cassm::cmd_track(cfg, model_path, cfg.out_dir);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
