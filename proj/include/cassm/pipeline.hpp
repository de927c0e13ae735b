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

#ifndef CASSM_PIPELINE_HPP
#define CASSM_PIPELINE_HPP

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

#include "cassm/plant.hpp"

namespace cassm {

/// Uniformly sampled time series of observations, applied inputs, and
/// commanded references.
struct Trajectory {
  std::vector<Observation> samples;
  double dt = 0.02;
  std::uint64_t seed = 0;
  std::string protocol;

  int o() const { return samples.empty() ? 0 : static_cast<int>(samples.front().y.size()); }
  int m() const { return samples.empty() ? 0 : static_cast<int>(samples.front().u.size()); }
};

/// CSV format: header t,y1..y{o},u1..u{m},uref1..uref{m}, one row per sample.
void write_trajectory_csv(const std::string& path, const Trajectory& traj);
Trajectory read_trajectory_csv(const std::string& path);

struct DecayProtocol {
  int n_traj = 30;
  double pulse_duration = 0.4;   ///< s the randomized pulse is held
  double pulse_magnitude = 0.6;  ///< command units, scales the random direction
  std::uint64_t direction_seed = 1;
  double record_horizon = 4.0;   ///< s recorded after release
  double dt = 0.02;
};

/// Randomized input pulses followed by recorded controlled decays. Blown-up
/// trajectories are discarded; the count is returned through `discarded`.
std::vector<Trajectory> collect_decays(const PlantConfig& cfg, const DecayProtocol& protocol,
                                       int* discarded = nullptr);

/// Samples strictly after the pulse release (u_ref identically zero).
Trajectory release_phase(const Trajectory& traj);

/// Per-coordinate constant-velocity Kalman forward pass + RTS backward pass
/// on the observed coordinates; actuator channels pass through untouched.
Trajectory kalman_rts_smooth(const Trajectory& traj, double q_noise, double r_noise);

/// A delay-embedded observed augmented state: L contiguous per-lag blocks
/// [y(t−k·dt); u(t−k·dt)] for k = 0..L−1 (lag 0 first).
using EmbeddedVector = Eigen::VectorXd;

/// Embedded series; column k of X is the embedded vector at time t[k].
struct EmbeddedSeries {
  Eigen::MatrixXd X;
  std::vector<double> t;
  int o = 0, m = 0, L = 1;
  int dim() const { return L * (o + m); }
};

/// Emits length−(L−1) embedded vectors; the earliest L−1 samples are
/// consumed as history. Throws std::invalid_argument for L < 1 or a
/// trajectory shorter than L.
EmbeddedSeries delay_embed(const Trajectory& traj, int L);

/// Observation-only variant with per-lag blocks y(t−k·dt) (no actuator rows).
EmbeddedSeries delay_embed_observations(const Trajectory& traj, int L);

/// 4th-order central differences in the interior, 2nd-order central/one-sided
/// near the ends. Columns are samples. Requires at least 5 samples.
Eigen::MatrixXd estimate_derivatives(const Eigen::MatrixXd& series, double dt);

/// Invertible per-coordinate affine map x ↦ (x − center)/scale. Scales are
/// block-uniform: one value shared by all y coordinates/lags and one by all
/// u coordinates/lags.
struct Normalization {
  Eigen::VectorXd center;
  Eigen::VectorXd scale;

  Eigen::VectorXd apply(const Eigen::VectorXd& x) const {
    return (x - center).cwiseQuotient(scale);
  }
  Eigen::VectorXd invert(const Eigen::VectorXd& xn) const {
    return xn.cwiseProduct(scale) + center;
  }
  Eigen::MatrixXd apply_batch(const Eigen::MatrixXd& X) const;
  Eigen::MatrixXd invert_batch(const Eigen::MatrixXd& Xn) const;
};

/// Center from the trailing 0.25 s of each series (the measured rest state);
/// block-uniform scales from the RMS of the deviations.
Normalization fit_normalization(const std::vector<EmbeddedSeries>& series, double tail_s,
                                double dt);

/// Train/validation/test partitions, disjoint by trajectory.
struct Dataset {
  std::vector<Trajectory> train;
  std::vector<Trajectory> validation;
  std::vector<Trajectory> test;
};

Dataset split_dataset(const std::vector<Trajectory>& trajs, double train_frac, double valid_frac,
                      std::uint64_t seed);

}  // namespace cassm

#endif  // CASSM_PIPELINE_HPP
