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

#ifndef CASSM_CONTROL_HPP
#define CASSM_CONTROL_HPP

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "cassm/baselines.hpp"
#include "cassm/manifold.hpp"
#include "cassm/plant.hpp"

namespace cassm {

// ---------------------------------------------------------------------------
// Actuator-side feedback design
// ---------------------------------------------------------------------------

/// Continuous-time algebraic Riccati solution for (A, B, Q, R) via the
/// stable invariant subspace of the Hamiltonian. Throws std::runtime_error
/// when the stable subspace is degenerate or the residual check fails.
Eigen::MatrixXd solve_care(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                           const Eigen::MatrixXd& Q, const Eigen::MatrixXd& R);

/// Gain K such that A + B·K is Hurwitz, from the Riccati solution
/// (K = −R⁻¹BᵀP).
Eigen::MatrixXd lqr_gain(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                         const Eigen::MatrixXd& Q, const Eigen::MatrixXd& R);

struct FeedbackDesign {
  Eigen::MatrixXd K;  ///< stabilizing gain, m×n_f
  Eigen::MatrixXd H;  ///< actuator feedback H = K·Aᵘ − Λ·K + K·A_u·K
  double beta = 0.0;    ///< actuator bandwidth from the symmetric part of Λ
  double margin = 0.0;  ///< ‖K·A_u‖₂
  Eigen::VectorXcd augmented_spectrum;  ///< eig([[Aᵘ, A_u], [H, Λ]])
  bool ok = false;
  std::string message;
};

/// Stabilizing actuator-feedback construction for an unstable system block.
/// Requires Λ ⪯ −β·I (checked via the symmetric part); succeeds when the
/// bandwidth margin ‖K·A_u‖₂ < β holds and the closed augmented matrix is
/// Hurwitz. Throws std::invalid_argument for an unstabilizable pair, naming
/// an uncontrollable unstable mode.
FeedbackDesign design_feedback(const Eigen::MatrixXd& A_unstable, const Eigen::MatrixXd& A_u,
                               const Eigen::MatrixXd& Lambda);

/// ‖K(iω)‖₂ of the transfer filter K(s) = (sI − Λ)⁻¹H over a frequency grid.
/// Verifies the DC identity K(0) = −Λ⁻¹H to 1e-10 and monotone decay of the
/// gain beyond 10·β; throws std::runtime_error if either check fails.
Eigen::VectorXd feedback_filter_response(const Eigen::MatrixXd& H, const Eigen::MatrixXd& Lambda,
                                         const Eigen::VectorXd& omegas);

// ---------------------------------------------------------------------------
// Reduced-order MPC
// ---------------------------------------------------------------------------

/// Uniform interface the MPC consumes; adapters wrap the identified models.
class ReducedOrderModel {
 public:
  virtual ~ReducedOrderModel() = default;
  virtual int state_dim() const = 0;
  virtual int input_dim() const = 0;
  virtual int obs_dim() const = 0;
  /// Raw observations needed to encode the current state.
  virtual int window_len() const = 0;
  /// Commanded-input lags entering one step (1 unless ref_mode is exact).
  virtual int input_lags() const { return 1; }
  /// Newest-first window of raw observations → model state.
  virtual Eigen::VectorXd encode_window(const std::vector<Observation>& window) const = 0;
  /// One model step at dt; u_lags is newest-first with ≥ input_lags() entries.
  virtual Eigen::VectorXd step(const Eigen::VectorXd& x,
                               const std::vector<Eigen::VectorXd>& u_lags, double dt) const = 0;
  virtual void step_jacobians(const Eigen::VectorXd& x,
                              const std::vector<Eigen::VectorXd>& u_lags, double dt,
                              Eigen::MatrixXd& A,
                              std::vector<Eigen::MatrixXd>& B_lags) const = 0;
  /// Decoded observation, meters.
  virtual Eigen::VectorXd observation(const Eigen::VectorXd& x) const = 0;
  virtual Eigen::MatrixXd observation_jacobian(const Eigen::VectorXd& x) const = 0;
};

class CassmRom : public ReducedOrderModel {
 public:
  explicit CassmRom(ManifoldModel model) : model_(std::move(model)) {}
  const ManifoldModel& model() const { return model_; }
  int state_dim() const override { return model_.dims.n; }
  int input_dim() const override { return model_.dims.m; }
  int obs_dim() const override { return model_.dims.o; }
  int window_len() const override { return model_.dims.L; }
  int input_lags() const override {
    return model_.ref_mode == RefMode::exact ? model_.dims.L : 1;
  }
  Eigen::VectorXd encode_window(const std::vector<Observation>& window) const override;
  Eigen::VectorXd step(const Eigen::VectorXd& x, const std::vector<Eigen::VectorXd>& u_lags,
                       double dt) const override;
  void step_jacobians(const Eigen::VectorXd& x, const std::vector<Eigen::VectorXd>& u_lags,
                      double dt, Eigen::MatrixXd& A,
                      std::vector<Eigen::MatrixXd>& B_lags) const override;
  Eigen::VectorXd observation(const Eigen::VectorXd& x) const override;
  Eigen::MatrixXd observation_jacobian(const Eigen::VectorXd& x) const override;

 private:
  ManifoldModel model_;
};

class OssmRom : public ReducedOrderModel {
 public:
  explicit OssmRom(OssmModel model) : model_(std::move(model)) {}
  const OssmModel& model() const { return model_; }
  int state_dim() const override { return model_.n; }
  int input_dim() const override { return model_.m; }
  int obs_dim() const override { return model_.o; }
  int window_len() const override { return model_.L; }
  Eigen::VectorXd encode_window(const std::vector<Observation>& window) const override;
  Eigen::VectorXd step(const Eigen::VectorXd& x, const std::vector<Eigen::VectorXd>& u_lags,
                       double dt) const override;
  void step_jacobians(const Eigen::VectorXd& x, const std::vector<Eigen::VectorXd>& u_lags,
                      double dt, Eigen::MatrixXd& A,
                      std::vector<Eigen::MatrixXd>& B_lags) const override;
  Eigen::VectorXd observation(const Eigen::VectorXd& x) const override;
  Eigen::MatrixXd observation_jacobian(const Eigen::VectorXd& x) const override;

 private:
  OssmModel model_;
};

class KoopmanRom : public ReducedOrderModel {
 public:
  explicit KoopmanRom(KoopmanModel model) : model_(std::move(model)) {}
  const KoopmanModel& model() const { return model_; }
  int state_dim() const override { return model_.lifted_dim; }
  int input_dim() const override { return model_.m; }
  int obs_dim() const override { return model_.o; }
  int window_len() const override { return model_.delays + 1; }
  Eigen::VectorXd encode_window(const std::vector<Observation>& window) const override;
  Eigen::VectorXd step(const Eigen::VectorXd& x, const std::vector<Eigen::VectorXd>& u_lags,
                       double dt) const override;
  void step_jacobians(const Eigen::VectorXd& x, const std::vector<Eigen::VectorXd>& u_lags,
                      double dt, Eigen::MatrixXd& A,
                      std::vector<Eigen::MatrixXd>& B_lags) const override;
  Eigen::VectorXd observation(const Eigen::VectorXd& x) const override;
  Eigen::MatrixXd observation_jacobian(const Eigen::VectorXd& x) const override;

 private:
  KoopmanModel model_;
};

struct MpcConfig {
  int horizon = 10;               ///< model steps
  double dt = 0.02;               ///< model rate, s
  double actuation_period = 0.04; ///< s, integer multiple of dt
  Eigen::VectorXd q_weights;      ///< p, per-mm² stage weights
  Eigen::VectorXd qf_weights;     ///< p, terminal weights
  Eigen::VectorXd rdelta_weights; ///< m, input-change weights
  Eigen::VectorXd u_min, u_max;   ///< m, command box
  bool y_bounds_enabled = false;
  Eigen::VectorXd y_min, y_max;   ///< p, mm (soft, slack-penalized)
  double y_slack_cap_mm = 10.0;   ///< saturation threshold for soft bounds
  std::vector<int> perf_rows;     ///< indices into the o observation rows
  int scp_iters = 3;
  double qp_tol = 1e-8;
  int qp_max_iters = 4000;
  double trust_region = 0.4;      ///< initial ∞-norm radius on δu

  /// Default configuration for an o-dimensional observation with 3-coordinate
  /// tip performance selection and m commands.
  static MpcConfig defaults(int o, int m);

  int steps_per_command() const;
  int n_commands() const;
  void validate() const;
};

struct MpcSolution {
  Eigen::MatrixXd u;  ///< m × n_commands
  Eigen::MatrixXd z;  ///< state_dim × (horizon+1) predicted reference rollout
  double cost = 0.0;
  double kkt_residual = 0.0;
  int qp_iterations = 0;
  enum class Status { optimal, max_iter, infeasible } status = Status::optimal;
};

/// One step's affine model δz⁺ = A δz + Σ_lag B_lag δu, with the linearized
/// performance output (mm) around the reference rollout.
struct AffineStepModel {
  Eigen::MatrixXd A;
  std::vector<Eigen::MatrixXd> B_lags;
  Eigen::VectorXd zbar;
  Eigen::VectorXd ybar;  ///< p, mm
  Eigen::MatrixXd C;     ///< p × n, mm
};

/// Forward-sensitivity linearization of the model along a reference rollout
/// started at z0 under the given commands (m × n_commands); entry k holds the
/// k→k+1 transition and the output linearization at step k+1. `u_prev` fills
/// the command history before the horizon in exact-lag mode.
std::vector<AffineStepModel> linearize_reduced(const ReducedOrderModel& rom,
                                               const Eigen::VectorXd& z0,
                                               const Eigen::MatrixXd& commands,
                                               const MpcConfig& config,
                                               const Eigen::VectorXd& u_prev);

/// Condensed box-constrained tracking QP solved by accelerated projected
/// gradient to qp_tol. `reference` is p × (horizon+1) in mm; `u_prev` is the
/// previously applied command; `u_bar` the linearization commands;
/// `trust_radius` an ∞-norm box around u_bar (≤ 0 disables it).
MpcSolution solve_tracking_qp(const std::vector<AffineStepModel>& models,
                              const Eigen::VectorXd& z0, const Eigen::MatrixXd& reference,
                              const MpcConfig& config, const Eigen::VectorXd& u_prev,
                              const Eigen::MatrixXd& u_bar, double trust_radius);

struct MpcState {
  Eigen::MatrixXd u_warm;       ///< previous solution, m × n_commands
  Eigen::VectorXd u_applied;    ///< last applied command
  bool valid = false;
};

struct MpcStepInfo {
  double solve_ms = 0.0;
  double kkt_residual = 0.0;
  int scp_iterations = 0;
  int qp_iterations = 0;
  double cost = 0.0;
  bool fallback = false;  ///< rollout diverged; previous input returned
};

/// Encode, run SCP rounds (linearize → QP → trust-region update), and return
/// the first command, held for one actuation period.
Eigen::VectorXd mpc_step(const ReducedOrderModel& rom, const std::vector<Observation>& window,
                         const Eigen::MatrixXd& reference, const MpcConfig& config,
                         MpcState& state, MpcStepInfo* info = nullptr);

struct ClosedLoopOptions {
  double duration_s = 20.0;
  double transient_exclusion_s = 1.0;
  std::uint64_t noise_seed = 0;
};

struct ClosedLoopResult {
  Trajectory log;
  Eigen::MatrixXd y_ref;  ///< p × samples, meters
  double rmse_mm = 0.0;   ///< over Q-weighted performance coordinates
  bool diverged = false;
  double mean_solve_ms = 0.0;
  double max_solve_ms = 0.0;
  double max_kkt = 0.0;
  double mean_scp_iters = 0.0;
  std::vector<double> solve_ms;
};

/// Simulate the plant at the model rate with zero-order-hold commands at the
/// actuation period; the controller sees raw (optionally noisy) measurements.
ClosedLoopResult closed_loop_run(const PlantConfig& plant, const ReducedOrderModel& rom,
                                 const MpcConfig& config,
                                 const std::function<Eigen::VectorXd(double)>& y_ref,
                                 const ClosedLoopOptions& options);

}  // namespace cassm

#endif  // CASSM_CONTROL_HPP
