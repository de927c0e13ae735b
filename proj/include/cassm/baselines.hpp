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

#ifndef CASSM_BASELINES_HPP
#define CASSM_BASELINES_HPP

#include <Eigen/Dense>

#include <vector>

#include "cassm/features.hpp"
#include "cassm/pipeline.hpp"

namespace cassm {

/// Observation-only manifold model with a separately calibrated affine
/// control map: ż = R0 z + R_nl·poly(z) + B_r u.
struct OssmModel {
  int o = 0, m = 0, L = 2, n = 5;
  Eigen::MatrixXd V;  ///< (L·o)×n, VᵀV = I
  FeatureMapSpec w_spec;
  Eigen::MatrixXd W_nl;
  Eigen::MatrixXd R0;
  FeatureMapSpec r_spec;
  Eigen::MatrixXd R_nl;
  Eigen::MatrixXd B_r;  ///< n×m, acts on the commanded input
  Normalization norm;   ///< over the L·o embedded observation coords
  double dt_train = 0.02;
  double train_max_state = 0.0;  ///< max ‖z‖ seen in training
};

struct OssmOptions {
  int n = 5;
  int L = 2;
  int degree = 2;
  double ridge = 2e-4;
  bool smooth = true;
  double q_noise = 0.01;
  double r_noise = 4e-8;
  double tail_s = 0.25;
  int trim = 2;
};

/// Manifold and autonomous dynamics from decay data; B_r from controlled
/// trajectories by least squares on the dynamics residual. Throws
/// std::invalid_argument when no controlled data is supplied (the affine
/// control map requires a calibration set).
OssmModel fit_ossm(const std::vector<Trajectory>& decays,
                   const std::vector<Trajectory>& controlled, const OssmOptions& options);

/// Discrete-time EDMD model ψ⁺ = A_d ψ + B_d u over a polynomial lifting of
/// delay-stacked observations.
struct KoopmanModel {
  int o = 0, m = 0;
  int delays = 1;  ///< extra lags stacked (window is delays+1 samples)
  int degree = 2;  ///< polynomial lifting degree
  Eigen::MatrixXd A_d;
  Eigen::MatrixXd B_d;
  Normalization norm;  ///< over the stacked observation coords
  double dt = 0.02;
  int lifted_dim = 0;
  double spectral_radius = 0.0;
  double train_max_state = 0.0;  ///< max ‖ψ‖ seen in training
};

struct KoopmanOptions {
  int degree = 2;
  int delays = 1;
  double ridge = 1e-6;
  bool smooth = true;
  double q_noise = 0.01;
  double r_noise = 4e-8;
  double tail_s = 0.25;
};

/// EDMD least squares on one-step pairs of lifted states with an input term.
/// Refuses lifted dimensions above 5000.
KoopmanModel fit_koopman(const std::vector<Trajectory>& trajectories,
                         const KoopmanOptions& options);

/// Lifting ψ(s) of a normalized stacked observation vector.
Eigen::VectorXd koopman_lift(const KoopmanModel& model, const Eigen::VectorXd& stacked_norm);

struct BaselinePrediction {
  Eigen::MatrixXd y;  ///< o×(steps+1), meters
  bool diverged = false;
  int diverged_step = -1;
};

/// RK4 rollout of the continuous oSSM dynamics from an embedded
/// observation-only start state (L·o, newest lag first).
BaselinePrediction predict_ossm(const OssmModel& model, const Eigen::VectorXd& y_embedded,
                                const std::vector<Eigen::VectorXd>& uref_sequence, double dt,
                                int steps);

/// One-step iteration of the lifted linear model from a stacked observation
/// start state ((delays+1)·o, newest lag first).
BaselinePrediction predict_koopman(const KoopmanModel& model, const Eigen::VectorXd& y_stacked,
                                   const std::vector<Eigen::VectorXd>& uref_sequence, int steps);

}  // namespace cassm

#endif  // CASSM_BASELINES_HPP
