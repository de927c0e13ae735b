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

#include "cassm/plant.hpp"

using namespace cassm;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

// Independent oracle: elastic + gravitational potential of the chain.
double potential_energy(const VectorXd& q, const PlantConfig& cfg) {
  const double l0 = cfg.rest_length / cfg.n_nodes;
  double U = 0.0;
  for (int i = 1; i <= cfg.n_nodes; ++i) {
    Eigen::Vector3d p0 = Eigen::Vector3d::Zero();
    if (i > 1) p0 = q.segment<3>(3 * (i - 2));
    const Eigen::Vector3d p1 = q.segment<3>(3 * (i - 1));
    const double ext = (p1 - p0).norm() - l0;
    U += 0.5 * cfg.k_lin * ext * ext + 0.25 * cfg.k_cub * ext * ext * ext * ext;
  }
  for (int i = 0; i < cfg.n_nodes; ++i) U += cfg.mass * cfg.gravity * q(3 * i + 2);
  return U;
}

}  // namespace

TEST_CASE("equilibrium is a fixed point") {
  const PlantConfig cfg = default_plant();
  const PlantState eq = equilibrium_state(cfg);
  const PlantState dot = plant_derivative(eq, VectorXd::Zero(2), cfg);
  CHECK(dot.qdot.norm() < 1e-10);
  CHECK(dot.q.norm() == 0.0);
  CHECK(dot.u.norm() == 0.0);
}

TEST_CASE("actuator rows are exactly the first-order lag") {
  const PlantConfig cfg = default_plant();
  PlantState state = equilibrium_state(cfg);
  state.u << 0.3, -0.7;
  const PlantState dot = plant_derivative(state, VectorXd::Zero(2), cfg);
  CHECK((dot.u - cfg.lambda_true * state.u).norm() == 0.0);
}

TEST_CASE("conservative forces match the potential-energy gradient") {
  PlantConfig cfg = default_plant();
  cfg.c_damp_alpha = 0.0;
  cfg.c_damp_beta = 0.0;
  std::mt19937_64 rng(11);
  std::normal_distribution<double> normal(0.0, 0.01);
  PlantState state = equilibrium_state(cfg);
  for (int i = 0; i < state.q.size(); ++i) state.q(i) += normal(rng);
  state.u.setZero();
  state.qdot.setZero();

  const PlantState dot = plant_derivative(state, VectorXd::Zero(2), cfg);
  const VectorXd force = cfg.mass * dot.qdot;

  const double h = 1e-6;
  VectorXd fd(force.size());
  for (int i = 0; i < force.size(); ++i) {
    VectorXd qp = state.q, qm = state.q;
    qp(i) += h;
    qm(i) -= h;
    fd(i) = -(potential_energy(qp, cfg) - potential_energy(qm, cfg)) / (2.0 * h);
  }
  CHECK((force - fd).norm() / fd.norm() < 1e-8);
}

TEST_CASE("rk4 integrates the actuator lag like the scalar exponential") {
  PlantConfig cfg = default_plant();
  cfg.m_inputs = 1;
  cfg.lambda_true = -MatrixXd::Identity(1, 1);
  cfg.input_gain_linear = MatrixXd::Zero(cfg.n_q(), 1);
  PlantState state = equilibrium_state(cfg);
  state.u(0) = 1.0;
  const PlantState next = rk4_step(state, VectorXd::Zero(1), 0.02, cfg);
  CHECK(next.u(0) == doctest::Approx(std::exp(-0.02)).epsilon(1e-9));
}

TEST_CASE("rk4 leaves a fixed point unchanged") {
  const PlantConfig cfg = default_plant();
  const PlantState eq = equilibrium_state(cfg);
  const PlantState next = rk4_step(eq, VectorXd::Zero(2), 0.02, cfg);
  CHECK((next.q - eq.q).norm() < 1e-9);
  CHECK(next.qdot.norm() < 1e-9);
}

TEST_CASE("rk4 one-step error drops by ~16 when dt halves") {
  const PlantConfig cfg = default_plant();
  PlantState state = equilibrium_state(cfg);
  state.u << 0.4, -0.2;
  for (int i = 0; i < state.q.size(); ++i) state.q(i) += 0.002 * std::sin(0.7 * i);
  const VectorXd uref = VectorXd::Zero(2);

  const double dt = 2.5e-4;  // inside the stability region of the stiff damping roots
  auto substep = [&](double h, int n) {
    PlantState s = state;
    for (int i = 0; i < n; ++i) s = rk4_step(s, uref, h, cfg);
    return s;
  };
  const PlantState ref = substep(dt / 16, 16);
  const PlantState coarse = substep(dt, 1);
  const PlantState fine = substep(dt / 2, 2);
  const double e_coarse = (coarse.qdot - ref.qdot).norm() + (coarse.q - ref.q).norm();
  const double e_fine = (fine.qdot - ref.qdot).norm() + (fine.q - ref.q).norm();
  const double ratio = e_coarse / e_fine;
  CHECK(ratio > 12.0);
  CHECK(ratio < 20.0);
}

TEST_CASE("rk4 global error on 1 s drops by at least 2^3.5 when dt halves") {
  const PlantConfig cfg = default_plant();
  PlantState state = equilibrium_state(cfg);
  for (int i = 0; i < state.q.size(); ++i) state.q(i) += 0.002 * std::cos(0.9 * i);
  const VectorXd uref = VectorXd::Zero(2);
  // settle the stiff transients, then study the smooth driven flow so
  // truncation stays above the roundoff floor over the whole second
  for (int i = 0; i < 2000; ++i) state = rk4_step(state, uref, 2.5e-4, cfg);
  VectorXd drive(2);
  drive << 0.5, -0.3;
  auto run = [&](double h) {
    PlantState s = state;
    const int n = static_cast<int>(std::round(1.0 / h));
    for (int i = 0; i < n; ++i) s = rk4_step(s, drive, h, cfg);
    return s;
  };
  const PlantState ref = run(2.5e-5);
  const double e1 = (run(4e-4).q - ref.q).norm();
  const double e2 = (run(2e-4).q - ref.q).norm();
  CHECK(e1 / e2 >= std::pow(2.0, 3.5));
}

TEST_CASE("linearization: Hurwitz A, exact actuator block, union spectrum") {
  const PlantConfig cfg = default_plant();
  const PlantLinearization lin = linearize_plant(cfg);

  Eigen::EigenSolver<MatrixXd> es(lin.A, false);
  CHECK(es.eigenvalues().real().maxCoeff() < 0.0);

  CHECK((lin.Lambda - cfg.lambda_true).norm() < 1e-6 * cfg.lambda_true.norm());

  // block-triangular structure: augmented spectrum = eig(A) ∪ eig(Λ)
  Eigen::EigenSolver<MatrixXd> aug(lin.augmented(), false);
  std::vector<std::complex<double>> expected, got;
  for (long i = 0; i < es.eigenvalues().size(); ++i) expected.push_back(es.eigenvalues()(i));
  Eigen::EigenSolver<MatrixXd> el(lin.Lambda, false);
  for (long i = 0; i < el.eigenvalues().size(); ++i) expected.push_back(el.eigenvalues()(i));
  for (long i = 0; i < aug.eigenvalues().size(); ++i) got.push_back(aug.eigenvalues()(i));
  auto less = [](const std::complex<double>& a, const std::complex<double>& b) {
    return std::make_pair(a.real(), a.imag()) < std::make_pair(b.real(), b.imag());
  };
  std::sort(expected.begin(), expected.end(), less);
  std::sort(got.begin(), got.end(), less);
  double worst = 0.0;
  for (std::size_t i = 0; i < got.size(); ++i)
    worst = std::max(worst, std::abs(got[i] - expected[i]));
  CHECK(worst < 1e-6 * lin.A.norm());
}

TEST_CASE("observe extracts exact positions and obeys the noise level") {
  PlantConfig cfg = default_plant();
  const PlantState eq = equilibrium_state(cfg);
  const Observation clean = observe(eq, VectorXd::Zero(2), cfg);
  for (std::size_t k = 0; k < cfg.observed_nodes.size(); ++k)
    CHECK((clean.y.segment<3>(3 * k) - eq.q.segment<3>(3 * (cfg.observed_nodes[k] - 1))).norm() ==
          0.0);

  cfg.noise_std = 5e-4;
  std::mt19937_64 rng(42);
  double ss = 0.0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const Observation noisy = observe(eq, VectorXd::Zero(2), cfg, rng);
    ss += (noisy.y - clean.y).squaredNorm();
  }
  const double std_hat = std::sqrt(ss / (n * clean.y.size()));
  CHECK(std_hat == doctest::Approx(cfg.noise_std).epsilon(0.05));
}

TEST_CASE("observed_nodes = {n} gives o = 3") {
  PlantConfig cfg = default_plant();
  cfg.observed_nodes = {cfg.n_nodes};
  CHECK(cfg.n_obs() == 3);
  const Observation obs = observe(equilibrium_state(cfg), VectorXd::Zero(2), cfg);
  CHECK(obs.y.size() == 3);
}

TEST_CASE("autonomous decay reaches 1% of the initial deviation") {
  const PlantConfig cfg = default_plant();
  const PlantState eq = equilibrium_state(cfg);
  PlantState state = eq;
  for (int i = 0; i < cfg.n_nodes; ++i) state.q(3 * i) += 0.012 * (i + 1) / cfg.n_nodes;
  const double initial = (state.q - eq.q).norm();
  REQUIRE(initial <= 0.15);
  const VectorXd uref = VectorXd::Zero(2);
  bool decayed = false;
  for (int k = 0; k < 600 && !decayed; ++k) {
    state = advance(state, uref, 0.02, cfg);
    const double dev = (state.q - eq.q).norm() + 0.05 * state.qdot.norm() + state.u.norm();
    if (dev < 0.01 * initial) decayed = true;
  }
  CHECK(decayed);
}

TEST_CASE("actuator state tracks the command at the configured rate") {
  const PlantConfig cfg = default_plant();
  PlantState state = equilibrium_state(cfg);
  VectorXd uref(2);
  uref << 0.5, 0.0;
  for (int k = 0; k < 200; ++k) state = advance(state, uref, 0.02, cfg);
  const double u0 = state.u(0);
  PlantState later = state;
  const VectorXd zero = VectorXd::Zero(2);
  for (int k = 0; k < 25; ++k) later = advance(later, zero, 0.02, cfg);
  const double rate = std::log(later.u(0) / u0) / 0.5;
  CHECK(rate == doctest::Approx(-4.0).epsilon(0.02));
}

TEST_CASE("config validation rejects bad inputs") {
  PlantConfig cfg = default_plant();
  cfg.lambda_true = MatrixXd::Identity(2, 2);
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);

  cfg = default_plant();
  cfg.observed_nodes = {1, 1};
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);

  cfg = default_plant();
  cfg.observed_nodes = {99};
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);

  const PlantConfig good = default_plant();
  PlantState state = equilibrium_state(good);
  CHECK_THROWS_AS(plant_derivative(state, VectorXd::Zero(3), good), std::invalid_argument);
  CHECK_THROWS_AS(rk4_step(state, VectorXd::Zero(2), -0.1, good), std::invalid_argument);
}

TEST_CASE("linearized companion plant reproduces the plant near rest") {
  const PlantConfig cfg = make_linear(default_plant());
  const LinearizedPlant lp(cfg);
  VectorXd xi = VectorXd::Zero(lp.dim());
  xi(3 * (cfg.n_nodes - 1)) = 1e-3;
  PlantState full = equilibrium_state(cfg);
  full.q(3 * (cfg.n_nodes - 1)) += 1e-3;
  const VectorXd uref = VectorXd::Zero(2);
  for (int k = 0; k < 50; ++k) {
    xi = lp.step(xi, uref, 0.02);
    full = advance(full, uref, 0.02, cfg);
  }
  const Observation lin_obs = lp.observe(xi, uref, 1.0);
  const Observation full_obs = observe(full, uref, cfg);
  CHECK((lin_obs.y - full_obs.y).norm() < 1e-5);
}
