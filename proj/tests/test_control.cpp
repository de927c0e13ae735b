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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Eigenvalues>

#include <cmath>
#include <random>

#include "cassm/control.hpp"
#include "fixtures.hpp"

using namespace cassm;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

// Hand-built exactly-linear reduced model: two output states driven through
// a first-order actuator, identity normalization.
ManifoldModel toy_linear_model() {
  const int o = 2, m = 1, L = 1, n = 3;
  ManifoldModel model;
  model.dims = ModelDims{o, m, L, n};
  model.V = MatrixXd::Identity(3, 3);
  model.w_spec = FeatureMapSpec::polynomial(n, 2, 2);
  model.W_nl = MatrixXd::Zero(3, model.w_spec.output_dim());
  model.r_spec = model.w_spec;
  model.theta_r = MatrixXd::Zero(n, model.r_spec.output_dim());
  model.R0.resize(3, 3);
  model.R0 << -2.0, 0.0, 1.0, 0.0, -3.0, 0.5, 0.0, 0.0, -5.0;
  model.J0 = model.R0;
  model.Lambda = MatrixXd::Identity(1, 1) * -5.0;
  model.norm.center = VectorXd::Zero(3);
  model.norm.scale = VectorXd::Ones(3);
  model.ref_mode = RefMode::approx;
  model.dt_train = 0.02;
  return model;
}

MpcConfig toy_config() {
  MpcConfig cfg = MpcConfig::defaults(2, 1);
  cfg.perf_rows = {0, 1};
  cfg.q_weights = (VectorXd(2) << 7.0, 7.0).finished();
  cfg.qf_weights = (VectorXd(2) << 20.0, 20.0).finished();
  cfg.rdelta_weights = VectorXd::Constant(1, 0.16);
  cfg.u_min = VectorXd::Constant(1, -1.0);
  cfg.u_max = VectorXd::Constant(1, 1.0);
  return cfg;
}

}  // namespace

TEST_CASE("CARE solution stabilizes and satisfies the Riccati equation") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 2 + trial % 4;
    const int m = 1 + trial % 2;
    MatrixXd A(n, n), B(n, m);
    for (int i = 0; i < A.size(); ++i) A(i / n, i % n) = normal(rng);
    for (int i = 0; i < B.size(); ++i) B(i / m, i % m) = normal(rng);
    const MatrixXd K = lqr_gain(A, B, MatrixXd::Identity(n, n), MatrixXd::Identity(m, m));
    double max_re = 0.0;
    CHECK(is_hurwitz(A + B * K, &max_re));
  }
}

TEST_CASE("feedback design follows the stabilization construction") {
  MatrixXd A(1, 1), B(1, 1), Lam(1, 1);
  A << 0.5;
  B << 1.0;
  Lam << -10.0;
  const FeedbackDesign design = design_feedback(A, B, Lam);
  REQUIRE(design.ok);
  CHECK(design.augmented_spectrum.real().maxCoeff() < 0.0);
  CHECK(design.margin < design.beta);

  // similarity transform T = [[1,0],[−K,1]] block-triangularizes Ã(H)
  MatrixXd aug(2, 2);
  aug << A(0, 0), B(0, 0), design.H(0, 0), Lam(0, 0);
  MatrixXd T = MatrixXd::Identity(2, 2);
  T(1, 0) = -design.K(0, 0);
  MatrixXd Tinv = MatrixXd::Identity(2, 2);
  Tinv(1, 0) = design.K(0, 0);
  const MatrixXd tri = T * aug * Tinv;
  CHECK(std::abs(tri(1, 0)) < 1e-12);

  // H = 0 leaves the block-triangular union spectrum
  MatrixXd aug0(2, 2);
  aug0 << A(0, 0), B(0, 0), 0.0, Lam(0, 0);
  Eigen::EigenSolver<MatrixXd> es(aug0, false);
  VectorXd eigs = es.eigenvalues().real();
  std::sort(eigs.data(), eigs.data() + 2);
  CHECK(eigs(0) == doctest::Approx(-10.0));
  CHECK(eigs(1) == doctest::Approx(0.5));
}

TEST_CASE("insufficient actuator bandwidth is reported, not asserted") {
  MatrixXd A(1, 1), B(1, 1), fast(1, 1), slow(1, 1);
  A << 0.5;
  B << 1.0;
  fast << -10.0;
  slow << -0.1;
  const FeedbackDesign good = design_feedback(A, B, fast);
  REQUIRE(good.ok);
  // same gain magnitude cannot clear a 0.1 bandwidth
  const FeedbackDesign bad = design_feedback(A, B, slow);
  CHECK(!bad.ok);
  CHECK(bad.message.find("bandwidth") != std::string::npos);
  CHECK(bad.margin >= bad.beta);
}

TEST_CASE("unstabilizable pairs are rejected with the offending mode") {
  MatrixXd A(2, 2), B(2, 1), Lam(1, 1);
  A << 1.0, 0.0, 0.0, -1.0;
  B << 0.0, 1.0;  // the unstable mode is untouched
  Lam << -10.0;
  CHECK_THROWS_WITH_AS(design_feedback(A, B, Lam), doctest::Contains("uncontrollable"),
                       std::invalid_argument);
}

TEST_CASE("transfer filter: DC identity, low-pass decay, zero response") {
  MatrixXd Lam(2, 2), H(2, 2);
  Lam << -5.0, 0.0, 0.0, -5.0;
  H << 1.0, 0.2, -0.3, 0.8;
  VectorXd omegas(40);
  for (int i = 0; i < 40; ++i) omegas(i) = std::pow(10.0, -1.0 + 5.0 * i / 39.0);
  const VectorXd gains = feedback_filter_response(H, Lam, omegas);
  const double dc = feedback_filter_response(H, Lam, VectorXd::Zero(1))(0);
  Eigen::JacobiSVD<MatrixXd> svd((-Lam).inverse() * H);
  CHECK(dc == doctest::Approx(svd.singularValues()(0)).epsilon(1e-10));
  CHECK(gains(39) < 0.01 * dc);

  const VectorXd silent = feedback_filter_response(MatrixXd::Zero(2, 2), Lam, omegas);
  CHECK(silent.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("linearize_reduced is exact for a linear model") {
  const ManifoldModel model = toy_linear_model();
  const CassmRom rom(model);
  MpcConfig cfg = toy_config();
  cfg.horizon = 8;

  VectorXd z0(3);
  z0 << 0.4, -0.2, 0.1;
  MatrixXd commands(1, cfg.n_commands());
  commands << 0.3, -0.1, 0.2, 0.0;
  const VectorXd u_prev = VectorXd::Zero(1);
  const auto models = linearize_reduced(rom, z0, commands, cfg, u_prev);

  // affine rollout equals the nonlinear rollout
  VectorXd z = z0;
  for (int k = 0; k < cfg.horizon; ++k) {
    const int c = std::min(k / cfg.steps_per_command(), cfg.n_commands() - 1);
    z = rom.step(z, {commands.col(c)}, cfg.dt);
    CHECK((z - models[k].zbar).norm() < 1e-10);
  }
  // input sensitivity is state-independent for the linear model
  MatrixXd A1, A2;
  std::vector<MatrixXd> B1, B2;
  rom.step_jacobians(z0, {VectorXd::Zero(1)}, cfg.dt, A1, B1);
  rom.step_jacobians(2.0 * z0, {VectorXd::Ones(1)}, cfg.dt, A2, B2);
  CHECK((B1[0] - B2[0]).norm() < 1e-14);
  CHECK((A1 - A2).norm() < 1e-14);
}

TEST_CASE("step jacobians match finite differences for the identified model") {
  const testing::LinearFixture fx(2);
  const CassmRom rom(fx.model);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> normal(0.0, 0.2);
  VectorXd z(6);
  for (int i = 0; i < 6; ++i) z(i) = normal(rng);
  VectorXd u(2);
  u << 0.2, -0.1;
  MatrixXd A;
  std::vector<MatrixXd> B;
  rom.step_jacobians(z, {u}, 0.02, A, B);

  const double h = 1e-6;
  for (int j = 0; j < 6; ++j) {
    VectorXd zp = z, zm = z;
    zp(j) += h;
    zm(j) -= h;
    const VectorXd fd = (rom.step(zp, {u}, 0.02) - rom.step(zm, {u}, 0.02)) / (2.0 * h);
    CHECK((A.col(j) - fd).norm() < 1e-6 * std::max(1.0, fd.norm()));
  }
  for (int j = 0; j < 2; ++j) {
    VectorXd up = u, um = u;
    up(j) += h;
    um(j) -= h;
    const VectorXd fd = (rom.step(z, {up}, 0.02) - rom.step(z, {um}, 0.02)) / (2.0 * h);
    CHECK((B[0].col(j) - fd).norm() < 1e-6 * std::max(1.0, fd.norm()));
  }
}

TEST_CASE("tracking QP: equilibrium reference yields the zero solution") {
  const ManifoldModel model = toy_linear_model();
  const CassmRom rom(model);
  const MpcConfig cfg = toy_config();
  const VectorXd z0 = VectorXd::Zero(3);
  MatrixXd commands = MatrixXd::Zero(1, cfg.n_commands());
  const auto models = linearize_reduced(rom, z0, commands, cfg, VectorXd::Zero(1));
  const MatrixXd reference = MatrixXd::Zero(2, cfg.horizon + 1);
  const MpcSolution sol =
      solve_tracking_qp(models, z0, reference, cfg, VectorXd::Zero(1), commands, -1.0);
  CHECK(sol.u.cwiseAbs().maxCoeff() < 1e-9);
  CHECK(sol.cost < 1e-12);
  CHECK(sol.kkt_residual <= cfg.qp_tol);
  CHECK(sol.status == MpcSolution::Status::optimal);
}

TEST_CASE("tracking QP matches the hand-solved scalar closed form") {
  // one step, one state, one input: y1 = a + b·u, J = (q+qf)(y1−r)² + rΔ·u²
  ManifoldModel model = toy_linear_model();
  const CassmRom rom(model);
  MpcConfig cfg = toy_config();
  cfg.horizon = 1;
  cfg.actuation_period = cfg.dt;
  cfg.q_weights = (VectorXd(2) << 3.0, 0.0).finished();
  cfg.qf_weights = (VectorXd(2) << 5.0, 0.0).finished();
  cfg.rdelta_weights = VectorXd::Constant(1, 2.0);
  cfg.u_min = VectorXd::Constant(1, -10.0);
  cfg.u_max = VectorXd::Constant(1, 10.0);

  const VectorXd z0 = VectorXd::Zero(3);
  const MatrixXd commands = MatrixXd::Zero(1, 1);
  const auto models = linearize_reduced(rom, z0, commands, cfg, VectorXd::Zero(1));
  MatrixXd reference = MatrixXd::Zero(2, 2);
  reference(0, 1) = 4.0;  // mm

  const MpcSolution sol =
      solve_tracking_qp(models, z0, reference, cfg, VectorXd::Zero(1), commands, -1.0);

  const double a = models[0].ybar(0);
  const double b = (models[0].C * [&] {
    MatrixXd S = MatrixXd::Zero(3, 1);
    S += models[0].B_lags[0];
    return S;
  }())(0, 0);
  const double q = 8.0;  // q + qf on the tracked row
  const double expected = q * b * (4.0 - a) / (q * b * b + 2.0);
  CHECK(sol.u(0, 0) == doctest::Approx(expected).epsilon(1e-8));
}

TEST_CASE("active input bounds clamp exactly") {
  const ManifoldModel model = toy_linear_model();
  const CassmRom rom(model);
  MpcConfig cfg = toy_config();
  const VectorXd z0 = VectorXd::Zero(3);
  const MatrixXd commands = MatrixXd::Zero(1, cfg.n_commands());
  const auto models = linearize_reduced(rom, z0, commands, cfg, VectorXd::Zero(1));
  const MatrixXd reference = MatrixXd::Constant(2, cfg.horizon + 1, 1e5);  // unreachable
  const MpcSolution sol =
      solve_tracking_qp(models, z0, reference, cfg, VectorXd::Zero(1), commands, -1.0);
  CHECK(sol.u.maxCoeff() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("mpc_step is deterministic and benefits from warm starts") {
  const ManifoldModel model = toy_linear_model();
  const CassmRom rom(model);
  MpcConfig cfg = toy_config();
  cfg.qp_tol = 1e-10;

  std::vector<Observation> window(1);
  window[0].y = (VectorXd(2) << 0.01, -0.02).finished();
  window[0].u = VectorXd::Zero(1);
  window[0].u_ref = VectorXd::Zero(1);

  MatrixXd reference(2, cfg.horizon + 1);
  for (int k = 0; k <= cfg.horizon; ++k) {
    reference(0, k) = 15.0 * std::cos(0.1 * k);
    reference(1, k) = 15.0 * std::sin(0.1 * k);
  }

  MpcState s1, s2;
  MpcStepInfo i1, i2;
  const VectorXd u1 = mpc_step(rom, window, reference, cfg, s1, &i1);
  const VectorXd u2 = mpc_step(rom, window, reference, cfg, s2, &i2);
  CHECK((u1 - u2).norm() == 0.0);
  CHECK(i1.kkt_residual <= cfg.qp_tol);

  // a warm-started re-solve of the same problem needs fewer QP iterations
  MpcStepInfo warm_info;
  mpc_step(rom, window, reference, cfg, s1, &warm_info);
  CHECK(warm_info.qp_iterations <= i1.qp_iterations);
  CHECK(!i1.fallback);
}

TEST_CASE("receding horizon drives a perfect linear model to zero error") {
  const ManifoldModel model = toy_linear_model();
  const CassmRom rom(model);
  MpcConfig cfg = toy_config();
  cfg.qp_tol = 1e-12;
  cfg.scp_iters = 2;

  // the model itself is the plant: track a reachable constant reference on
  // the weighted output (one input, so only one output can be commanded)
  cfg.q_weights = (VectorXd(2) << 7.0, 0.0).finished();
  cfg.qf_weights = (VectorXd(2) << 20.0, 0.0).finished();
  VectorXd z = VectorXd::Zero(3);
  const VectorXd target = (VectorXd(2) << 8.0, 0.0).finished();  // mm
  MatrixXd reference = target.replicate(1, cfg.horizon + 1);
  MpcState state;
  VectorXd u_cmd = VectorXd::Zero(1);
  const int spc = cfg.steps_per_command();
  for (int k = 0; k < 300; ++k) {
    if (k % spc == 0) {
      std::vector<Observation> window(1);
      window[0].y = rom.observation(z);
      window[0].u = z.tail(1);
      window[0].u_ref = u_cmd;
      u_cmd = mpc_step(rom, window, reference, cfg, state, nullptr);
    }
    z = rom.step(z, {u_cmd}, cfg.dt);
  }
  const VectorXd y_final = rom.observation(z) * 1000.0;
  CHECK(std::abs(y_final(0) - target(0)) < 0.02);  // mm
}

TEST_CASE("closed loop holds the equilibrium under a zero reference") {
  testing::DefaultData data;
  const ManifoldModel model = fit_cassm(data.decays, CassmOptions{}, nullptr);
  const CassmRom rom(model);
  const MpcConfig cfg = MpcConfig::defaults(9, 2);
  const Eigen::Vector3d tip_rest = equilibrium_state(data.cfg.plant).q.tail<3>();
  ClosedLoopOptions options;
  options.duration_s = 4.0;
  options.noise_seed = 5;
  const ClosedLoopResult result = closed_loop_run(
      data.cfg.plant, rom, cfg, [&](double) { return Eigen::VectorXd(tip_rest); }, options);
  CHECK(!result.diverged);
  CHECK(result.rmse_mm < 1.0);  // at the measurement-noise floor
  CHECK(result.max_kkt <= cfg.qp_tol);
}
