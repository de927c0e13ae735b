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

#ifndef CASSM_MANIFOLD_HPP
#define CASSM_MANIFOLD_HPP

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <vector>

#include "cassm/features.hpp"
#include "cassm/pipeline.hpp"
#include "cassm/plant.hpp"

namespace cassm {

struct ModelDims {
  int o = 0;  ///< observed coordinates per lag
  int m = 0;  ///< actuator channels per lag
  int L = 1;  ///< embedding depth
  int n = 0;  ///< reduced dimension
  int embedded_dim() const { return L * (o + m); }
};

struct SubspaceFit {
  Eigen::MatrixXd V;                   ///< D×n orthonormal principal directions
  Eigen::VectorXd explained_variance;  ///< per-component variance ratios
  Eigen::VectorXd singular_values;     ///< all D singular values, descending
};

/// Top-n principal directions of centered, normalized embedded data (columns
/// are samples). Throws std::invalid_argument when n exceeds the numerical
/// rank, listing the singular values.
SubspaceFit fit_subspace(const Eigen::MatrixXd& X_centered, int n);

/// Ridge regression of the off-subspace residual x̃ − VVᵀx̃ onto centered
/// features of z = Vᵀx̃, followed by projection so VᵀW_nl = 0 exactly.
Eigen::MatrixXd fit_parameterization(const Eigen::MatrixXd& X_centered, const Eigen::MatrixXd& V,
                                     const FeatureMapSpec& spec, double ridge,
                                     double* condition = nullptr);

struct ReducedDynamicsFit {
  Eigen::MatrixXd R0;       ///< n×n linear part
  Eigen::MatrixXd theta;    ///< n×n_phi feature coefficients
  Eigen::MatrixXd J0;       ///< origin Jacobian R0 + theta·Dφ(0)
  Eigen::VectorXcd j0_eigs;
  bool stable = false;      ///< all Re(eig(J0)) < 0
  double condition = 0.0;
};

/// Joint ridge least squares of ż onto [z; φ(z)−φ(0)].
ReducedDynamicsFit fit_reduced_dynamics(const Eigen::MatrixXd& Z, const Eigen::MatrixXd& Zdot,
                                        const FeatureMapSpec& spec, double ridge);

/// Actuator dynamics from the linear invariance condition,
/// Λ = (E_u V J0)(E_u V)†, with E_u extracting the lag-0 actuator rows
/// (all lag blocks when all_lags is set). Throws std::runtime_error when
/// the actuator rows of V are rank deficient.
Eigen::MatrixXd identify_lambda(const Eigen::MatrixXd& V, const Eigen::MatrixXd& J0,
                                const ModelDims& dims, bool all_lags = false);

/// Reduced-model divergence, carrying the offending step index.
struct DivergenceError : std::runtime_error {
  int step;
  explicit DivergenceError(int step_index)
      : std::runtime_error("reduced model diverged at step " + std::to_string(step_index)),
        step(step_index) {}
};

enum class RefMode { exact, approx };

/**
 * @brief Identified control-augmented manifold model.
 *
 * All matrices act in normalized deviation coordinates (see Normalization);
 * Λ is in physical units because the actuator block is scaled uniformly.
 */
struct ManifoldModel {
  ModelDims dims;
  Eigen::MatrixXd V;      ///< D×n, VᵀV = I
  FeatureMapSpec w_spec;
  Eigen::MatrixXd W_nl;   ///< D×n_phi_w, VᵀW_nl = 0
  Eigen::MatrixXd R0;     ///< n×n
  FeatureMapSpec r_spec;
  Eigen::MatrixXd theta_r;  ///< n×n_phi_r
  Eigen::MatrixXd J0;       ///< origin Jacobian of the fitted dynamics
  Eigen::MatrixXd Lambda;   ///< m×m actuator matrix
  Normalization norm;
  RefMode ref_mode = RefMode::approx;
  double dt_train = 0.02;

  double u_scale() const { return norm.scale(dims.o); }
};

/// z = Vᵀ·normalize(x̃_o)
Eigen::VectorXd encode(const ManifoldModel& model, const Eigen::VectorXd& x_embedded);

/// x̃_o = denormalize(Vz + W_nl·(φ(z)−φ(0)))
Eigen::VectorXd decode(const ManifoldModel& model, const Eigen::VectorXd& z);

/// Lag-0 observation rows of decode(z), in physical units.
Eigen::VectorXd decode_observation(const ManifoldModel& model, const Eigen::VectorXd& z);

/// Jacobian of decode_observation, o×n.
Eigen::MatrixXd decode_observation_jacobian(const ManifoldModel& model, const Eigen::VectorXd& z);

/// Reduced control-reference vector r_ref. `uref_history` is newest-first
/// ([u_ref(t), u_ref(t−dt), ...], physical units); exact mode consumes L
/// entries, approx mode repeats the current input across all lags.
Eigen::VectorXd control_reference(const ManifoldModel& model,
                                  const std::vector<Eigen::VectorXd>& uref_history, RefMode mode);

/// Constant gain of r_ref with respect to the lag-k commanded input.
Eigen::MatrixXd control_reference_gain(const ManifoldModel& model, int lag);

/// Sum of per-lag gains: r_ref(approx) = gain_total · u_ref(t).
Eigen::MatrixXd control_reference_gain_total(const ManifoldModel& model);

/// ż = R0 z + θ_r(φ(z)−φ(0)) + r_ref
Eigen::VectorXd reduced_derivative(const ManifoldModel& model, const Eigen::VectorXd& z,
                                   const std::vector<Eigen::VectorXd>& uref_history);

/// ∂ż/∂z = R0 + θ_r·Dφ(z)
Eigen::MatrixXd reduced_jacobian(const ManifoldModel& model, const Eigen::VectorXd& z);

struct PredictResult {
  Eigen::MatrixXd y;  ///< o×(steps+1) predicted observations
  Eigen::MatrixXd z;  ///< n×(steps+1) reduced trajectory
};

/// Encode the measured embedded start state, integrate the reduced dynamics
/// with RK4 (commands zero-order-held per step), and decode the observation
/// rows. `uref_prehistory` supplies commands before the start (newest first)
/// for the exact reference mode; when empty the first command is repeated.
/// Throws DivergenceError when the state leaves the finite range.
PredictResult predict_open_loop(const ManifoldModel& model, const Eigen::VectorXd& x0_embedded,
                                const std::vector<Eigen::VectorXd>& uref_sequence, double dt,
                                int steps,
                                const std::vector<Eigen::VectorXd>& uref_prehistory = {});

/// Relative linear-invariance residual ‖(V·J0)_rows − Ã·V‖_F / ‖Ã·V‖_F for a
/// manifold basis V and an ambient generator Ã. Ã may cover only the leading
/// rows of the ambient space (e.g. the lag-0 block of an embedding); the
/// comparison is then restricted to those rows.
double invariance_residual(const Eigen::MatrixXd& V_basis, const Eigen::MatrixXd& J0,
                           const Eigen::MatrixXd& A_ambient);

/// Empirical lag-0 ambient generator: ridge fit of the lag-0 block rows of
/// ẋ̃ onto x̃ over centered, normalized embedded decay data. Only samples
/// whose norm lies below the given quantile enter the fit (1.0 = all), so
/// the generator estimates the near-rest linearization when compared to an
/// origin Jacobian.
Eigen::MatrixXd fit_ambient_generator(const std::vector<Eigen::MatrixXd>& X_series,
                                      const std::vector<Eigen::MatrixXd>& Xdot_series,
                                      int lag0_rows, double ridge, double norm_quantile = 1.0);

/// Ambient generator of the plant's slow spectral subspace expressed in the
/// normalized embedded observation space: the n_slow slowest modes of the
/// augmented linearization are mapped through the marker selection and the
/// per-lag time shifts, and the least-norm generator Ψ·Λ_E·Ψ† is returned.
/// This is the ground-truth side of the linear invariance condition for a
/// delay-embedded model of the synthetic plant.
Eigen::MatrixXd embedded_slow_generator(const PlantLinearization& lin, const PlantConfig& cfg,
                                        const Normalization& norm, int L, double dt, int n_slow);

struct SpectralReport {
  Eigen::VectorXcd reduced_eigs;   ///< eig(J0)
  Eigen::VectorXcd actuator_eigs;  ///< eig(Λ)
  Eigen::VectorXcd system_eigs;    ///< reduced eigs minus actuator-matched ones
  Eigen::VectorXcd plant_eigs;     ///< mechanical linearization, when available
  enum class Overlap { separated_fast, overlapping, actuator_slower };
  Overlap overlap = Overlap::overlapping;
};

std::string to_string(SpectralReport::Overlap overlap);

/// Bandwidth classification of actuator vs retained system eigenvalues.
SpectralReport::Overlap classify_spectra(const Eigen::VectorXcd& actuator_eigs,
                                         const Eigen::VectorXcd& system_eigs);

SpectralReport spectral_diagnostic(const ManifoldModel& model,
                                   const PlantLinearization* plant_lin = nullptr);

struct CassmOptions {
  int n = 7;
  int L = 2;
  FeatureMapSpec::Kind feature_kind = FeatureMapSpec::Kind::rff;
  int rff_count = 512;
  double rff_lengthscale = 1.5;
  std::uint64_t rff_seed = 7;
  int poly_degree = 2;   ///< polynomial kind uses degrees [2, poly_degree]
  double ridge = 2e-4;
  bool smooth = true;
  double q_noise = 0.01;
  double r_noise = 4e-8;
  double tail_s = 0.25;  ///< trailing window used to estimate the rest state
  int trim = 2;          ///< end samples dropped from the dynamics regression
  bool lambda_all_lags = false;
  RefMode ref_mode = RefMode::approx;
};

struct FitReport {
  Eigen::VectorXd explained_variance;
  Eigen::VectorXd singular_values;
  double w_residual = 0.0;  ///< relative parameterization residual
  double r_residual = 0.0;  ///< relative dynamics residual
  double w_condition = 0.0;
  double r_condition = 0.0;
  Eigen::VectorXcd lambda_eigs;
  Eigen::VectorXcd j0_eigs;
  bool j0_stable = false;
  double invariance = 0.0;  ///< lag-0 empirical invariance residual
  SpectralReport spectral;
  std::vector<std::string> warnings;
};

/// Full identification pipeline on decay trajectories: smooth, cut the
/// release phase, embed, normalize, fit subspace/parameterization/dynamics,
/// and identify Λ.
ManifoldModel fit_cassm(const std::vector<Trajectory>& decays, const CassmOptions& options,
                        FitReport* report = nullptr);

}  // namespace cassm

#endif  // CASSM_MANIFOLD_HPP
