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

#ifndef CASSM_EXPERIMENT_HPP
#define CASSM_EXPERIMENT_HPP

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

#include "cassm/control.hpp"

namespace cassm {

inline constexpr const char* kVersion = "0.1.0";

struct ModelSpec {
  std::string kind = "cassm";  ///< cassm | ossm | koopman
  int n = 7;
  int L = 2;
  std::string features = "rff";
  int rff_count = 512;
  double lengthscale = 1.5;
  std::uint64_t rff_seed = 7;
  double ridge = 2e-4;
  bool lambda_all_lags = false;
  std::string ref_mode = "approx";
  int poly_degree = 2;
  int delays = 1;  ///< koopman
};

struct SmoothingConfig {
  bool enabled = true;
  double q_noise = 0.01;
  double r_noise = 4e-8;
};

struct OpenLoopProtocol {
  double total_s = 15.0;
  int segment_steps = 5;
  double dt = 0.02;
  double staircase_hold_s = 0.25;
  double staircase_magnitude = 0.6;
};

struct ClosedLoopSpec {
  std::string shape = "circle";  ///< circle | figure-eight
  double radius_fraction = 0.5;
  double angular_velocity = 0.5;  ///< rad/s
  double duration_s = 20.0;
  std::string tag;  ///< optional label for output files
};

/// Calibration protocol for the oSSM affine control map: low-amplitude
/// random staircase inputs.
struct CalibrationProtocol {
  int n_traj = 10;
  double duration_s = 8.0;
  double magnitude = 0.25;
  double hold_s = 0.25;
};

struct ExperimentConfig {
  PlantConfig plant;
  DecayProtocol protocol;
  SmoothingConfig smoothing;
  CalibrationProtocol calibration;
  std::vector<ModelSpec> models;
  OpenLoopProtocol openloop;
  std::vector<ClosedLoopSpec> closedloop;
  MpcConfig mpc;
  double workspace_radius = 0.0;  ///< m; 0 → measured from the plant's reach
  std::uint64_t seed = 1;
  std::string out_dir = "out";
};

/// Default workbench configuration (slow-actuator plant, three models).
ExperimentConfig default_experiment();

nlohmann::json to_json(const PlantConfig& cfg);
PlantConfig plant_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& cfg);
ExperimentConfig experiment_from_json(const nlohmann::json& j);

/// FNV-1a hash of the canonical config serialization, hex-encoded.
std::string config_hash(const nlohmann::json& j);

struct ReferenceTrajectory {
  std::string shape;
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  double radius = 0.0;
  double angular_velocity = 0.5;
  double duration_s = 20.0;
  double ramp_s = 1.0;  ///< smoothstep ramp from the center onto the path

  Eigen::VectorXd at(double t) const;
};

ReferenceTrajectory make_reference(const ClosedLoopSpec& spec, const Eigen::Vector3d& tip_rest,
                                   double workspace_radius);

/// Steady-state horizontal tip reach under a full-scale constant command.
double measure_workspace_radius(const PlantConfig& cfg);

/// Per-channel independent staircase: levels resampled uniformly in
/// [−magnitude, magnitude] every hold_s.
std::vector<Eigen::VectorXd> staircase_inputs(int m, int steps, double dt, double hold_s,
                                              double magnitude, std::uint64_t seed);

struct SegmentScore {
  double rmse_mm = 0.0;
  bool diverged = false;
};

struct OpenLoopReport {
  std::vector<std::string> model_names;
  std::vector<std::vector<SegmentScore>> segments;  ///< per model
  std::vector<double> mean_rmse_mm;
  std::vector<double> median_rmse_mm;
  std::vector<int> diverged_count;
};

/// §-style random-actuation benchmark: one seeded staircase run, partitioned
/// into fixed-length segments; every model is initialized at the measured
/// segment start and scored on the same data.
OpenLoopReport open_loop_benchmark(const ExperimentConfig& cfg,
                                   const ManifoldModel* cassm_model, const OssmModel* ossm_model,
                                   const KoopmanModel* koopman_model);

// Command entry points; return process exit codes (0 success, 1 fit/predict
// failure, 2 I/O or config error).
int cmd_collect(const ExperimentConfig& cfg, const std::string& out_dir);
int cmd_fit(const ExperimentConfig& cfg, const std::string& data_dir, const std::string& out_dir);
int cmd_predict(const ExperimentConfig& cfg, const std::string& models_dir,
                const std::string& out_dir);
int cmd_track(const ExperimentConfig& cfg, const std::string& model_path,
              const std::string& out_dir);
int cmd_diagnose(const std::string& model_path, bool json_output);

}  // namespace cassm

#endif  // CASSM_EXPERIMENT_HPP
