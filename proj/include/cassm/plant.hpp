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

#ifndef CASSM_PLANT_HPP
#define CASSM_PLANT_HPP

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <vector>

namespace cassm {

/**
 * @brief Synthetic full-order plant: a 3D point-mass chain hanging from a
 * fixed anchor, with linear+cubic segment springs, Rayleigh damping, gravity,
 * a configuration-dependent input map, and first-order actuator dynamics
 *
 *   u̇ = Λ(u − u_ref).
 *
 * Node positions are stacked [x1,y1,z1, x2,y2,z2, ...]; the anchor sits at
 * the origin and gravity points along −z, so the rest configuration hangs
 * straight down and is a genuine fixed point of the dynamics.
 */
struct PlantConfig {
  int n_nodes = 12;            ///< chain masses (anchor excluded)
  double mass = 0.05;          ///< kg per node
  double k_lin = 600.0;        ///< N/m linear segment stiffness
  double k_cub = 1.0e5;        ///< N/m^3 cubic segment stiffness
  double c_damp_alpha = 1.5;   ///< 1/s mass-proportional damping
  double c_damp_beta = 0.05;   ///< s stiffness-proportional damping
  double rest_length = 0.31;   ///< m total chain rest length
  int m_inputs = 2;
  Eigen::MatrixXd lambda_true;       ///< m×m Hurwitz actuator matrix (1/s)
  Eigen::MatrixXd input_gain_linear; ///< 3·n_nodes × m force map
  double input_gain_state = 2.0;     ///< coefficient of the tanh coupling
  std::vector<int> observed_nodes;   ///< 1-based node indices
  double gravity = 9.81;             ///< m/s^2 along −z
  double noise_std = 0.0;            ///< m, optional measurement noise
  int sim_substeps = 32;             ///< internal RK4 substeps per sample step

  int n_q() const { return 3 * n_nodes; }
  int n_mech() const { return 6 * n_nodes; }
  int n_obs() const { return 3 * static_cast<int>(observed_nodes.size()); }

  /// Throws std::invalid_argument on inconsistent dimensions, non-Hurwitz
  /// lambda_true, or out-of-range observed nodes.
  void validate() const;
};

/// Default slow-actuator configuration (Λ_true = −4·I against dominant
/// mechanical modes with Re ∈ [−6, −1]).
PlantConfig default_plant();

/// Same chain with the cubic stiffness and the state-dependent input
/// coupling switched off (geometric nonlinearity remains; the actuator row
/// is exactly linear in any case).
PlantConfig make_linear(PlantConfig cfg);

struct PlantState {
  Eigen::VectorXd q;     ///< node positions, m
  Eigen::VectorXd qdot;  ///< node velocities, m/s
  Eigen::VectorXd u;     ///< actuator state, normalized command units
  double t = 0.0;        ///< s
};

struct Observation {
  Eigen::VectorXd y;      ///< observed marker positions, m
  Eigen::VectorXd u;      ///< actuator state
  Eigen::VectorXd u_ref;  ///< commanded reference
  double t = 0.0;
};

/// Exact rest state: straight hanging chain with gravity-stretched segments
/// (per-segment Newton solve of k_lin·e + k_cub·e³ = tension), u = 0.
PlantState equilibrium_state(const PlantConfig& cfg);

/// Observed marker positions at rest.
Eigen::VectorXd equilibrium_observation(const PlantConfig& cfg);

/// Time derivative [q̇; q̈; u̇] of the coupled plant/actuator dynamics.
PlantState plant_derivative(const PlantState& state, const Eigen::VectorXd& u_ref,
                            const PlantConfig& cfg);

/// Classical RK4 step with u_ref held constant. Throws std::runtime_error
/// naming the offending time if the step produces non-finite values.
PlantState rk4_step(const PlantState& state, const Eigen::VectorXd& u_ref, double dt,
                    const PlantConfig& cfg);

/// Advance one sample interval using cfg.sim_substeps internal RK4 steps;
/// the harness integrates the stiff chain this way while sampling at dt.
PlantState advance(const PlantState& state, const Eigen::VectorXd& u_ref, double dt,
                   const PlantConfig& cfg);

struct PlantLinearization {
  Eigen::MatrixXd A;       ///< n_mech × n_mech mechanical block
  Eigen::MatrixXd A_u;     ///< n_mech × m input-coupling block
  Eigen::MatrixXd Lambda;  ///< m × m actuator block
  /// Augmented generator [[A, A_u], [0, Λ]].
  Eigen::MatrixXd augmented() const;
};

/// Central finite differences of plant_derivative at the equilibrium.
/// Throws std::runtime_error if A is not Hurwitz.
PlantLinearization linearize_plant(const PlantConfig& cfg);

/// Noise-free observation of the configured marker nodes.
Observation observe(const PlantState& state, const Eigen::VectorXd& u_ref,
                    const PlantConfig& cfg);

/// Observation with additive Gaussian noise of std cfg.noise_std on y.
Observation observe(const PlantState& state, const Eigen::VectorXd& u_ref,
                    const PlantConfig& cfg, std::mt19937_64& rng);

/**
 * @brief Exactly linear companion system: the augmented linearization
 * ξ̇ = Ã ξ + [0; −Λ u_ref] simulated directly, with ξ = [δx; u] the deviation
 * from the rest state. Serves as the ground truth for the linear-plant
 * oracles, where the chain's geometric nonlinearity must not enter.
 */
struct LinearizedPlant {
  PlantConfig cfg;
  PlantLinearization lin;
  PlantState eq;
  Eigen::MatrixXd A_aug;  ///< [[A, A_u], [0, Λ]]

  explicit LinearizedPlant(const PlantConfig& config);

  int dim() const { return static_cast<int>(A_aug.rows()); }
  Eigen::VectorXd derivative(const Eigen::VectorXd& xi, const Eigen::VectorXd& u_ref) const;
  /// Exact zero-order-hold step x⁺ = e^{Ãdt}x + Ã⁻¹(e^{Ãdt}−I)·[0; −Λu_ref];
  /// the discretization matrices are cached per dt.
  Eigen::VectorXd step(const Eigen::VectorXd& xi, const Eigen::VectorXd& u_ref, double dt) const;
  /// Marker positions (+ rest offset) and actuator rows of ξ.
  Observation observe(const Eigen::VectorXd& xi, const Eigen::VectorXd& u_ref, double t) const;

 private:
  mutable double cached_dt_ = -1.0;
  mutable Eigen::MatrixXd exp_dt_;
  mutable Eigen::MatrixXd input_dt_;
};

}  // namespace cassm

#endif  // CASSM_PLANT_HPP
