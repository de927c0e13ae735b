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

#ifndef CASSM_TESTS_FIXTURES_HPP
#define CASSM_TESTS_FIXTURES_HPP

#include <numeric>
#include <random>
#include <vector>

#include "cassm/experiment.hpp"
#include "cassm/linalg.hpp"
#include "cassm/manifold.hpp"

namespace cassm::testing {

// Oracle fixture around the exactly linear companion plant: noiseless decays
// launched from the slow invariant subspace, embedded with exact derivative
// series, and a reduced model identified through the regular pipeline ops.
struct LinearFixture {
  PlantConfig cfg;
  LinearizedPlant lp;
  Eigen::MatrixXd basis;  ///< full-state slow-mode basis
  int L;
  int n_slow;
  double dt = 0.01;
  ManifoldModel model;
  SubspaceFit subspace;
  ReducedDynamicsFit dynamics;

  /// `fit_dim` is the reduced dimension handed to the PCA; decays always
  /// launch from the full 6-dim slow eigenspace (two lateral pairs plus the
  /// actuator modes). With L = 1 the position-only observations image that
  /// subspace with rank 4, so fit_dim must be 4 there.
  explicit LinearFixture(int embedding_depth, int fit_dim = 6)
      : cfg(make_linear(default_plant())),
        lp((cfg.noise_std = 0.0, cfg)),
        basis(slow_mode_basis(lp.A_aug, 6)),
        L(embedding_depth),
        n_slow(fit_dim) {
    const int o = cfg.n_obs();
    const int m = cfg.m_inputs;
    const int D = L * (o + m);
    const Eigen::VectorXd uref0 = Eigen::VectorXd::Zero(m);

    std::mt19937_64 rng(3);
    std::normal_distribution<double> normal(0.0, 1.0);
    const int n_traj = 12, steps = 500;
    std::vector<EmbeddedSeries> embs;
    std::vector<Eigen::MatrixXd> derivs;
    for (int k = 0; k < n_traj; ++k) {
      Eigen::VectorXd w(6);
      for (int i = 0; i < 6; ++i) w(i) = normal(rng);
      Eigen::VectorXd xi = basis * w;
      xi *= 0.04 / xi.head(cfg.n_q()).norm();
      Trajectory tr;
      tr.dt = dt;
      std::vector<Eigen::VectorXd> dots;
      for (int s = 0; s <= steps; ++s) {
        tr.samples.push_back(lp.observe(xi, uref0, s * dt));
        dots.push_back(observed_derivative(xi, uref0));
        if (s < steps) xi = lp.step(xi, uref0, dt);
      }
      Eigen::MatrixXd Xd(D, steps + 1 - (L - 1));
      for (int s = L - 1; s <= steps; ++s)
        for (int lag = 0; lag < L; ++lag)
          Xd.block(lag * (o + m), s - (L - 1), o + m, 1) = dots[s - lag];
      derivs.push_back(Xd);
      embs.push_back(delay_embed(tr, L));
    }

    Normalization norm = fit_normalization(embs, 0.25, dt);
    for (int lag = 0; lag < L; ++lag) {
      norm.center.segment(lag * (o + m), o) = equilibrium_observation(cfg);
      norm.center.segment(lag * (o + m) + o, m).setZero();
    }
    long total = 0;
    for (const auto& e : embs) total += e.X.cols();
    Eigen::MatrixXd Xn(D, total), Xdotn(D, total);
    long at = 0;
    for (int k = 0; k < n_traj; ++k) {
      Xn.middleCols(at, embs[k].X.cols()) = norm.apply_batch(embs[k].X);
      Xdotn.middleCols(at, derivs[k].cols()) =
          norm.scale.cwiseInverse().asDiagonal() * derivs[k];
      at += embs[k].X.cols();
    }
    subspace = fit_subspace(Xn, n_slow);
    const Eigen::MatrixXd Z = subspace.V.transpose() * Xn;
    const Eigen::MatrixXd Zdot = subspace.V.transpose() * Xdotn;
    const FeatureMapSpec spec = FeatureMapSpec::polynomial(n_slow, 2, 2);
    dynamics = fit_reduced_dynamics(Z, Zdot, spec, 1e-12);

    model.dims = ModelDims{o, m, L, n_slow};
    model.V = subspace.V;
    model.w_spec = spec;
    model.W_nl = Eigen::MatrixXd::Zero(D, spec.output_dim());
    model.R0 = dynamics.R0;
    model.r_spec = spec;
    model.theta_r = dynamics.theta;
    model.J0 = dynamics.J0;
    model.Lambda = identify_lambda(subspace.V, dynamics.J0, model.dims);
    model.norm = norm;
    model.ref_mode = RefMode::approx;
    model.dt_train = dt;
  }

  Eigen::VectorXd observed_derivative(const Eigen::VectorXd& xi,
                                      const Eigen::VectorXd& uref) const {
    const Eigen::VectorXd d = lp.derivative(xi, uref);
    Eigen::VectorXd out(cfg.n_obs() + cfg.m_inputs);
    for (std::size_t k = 0; k < cfg.observed_nodes.size(); ++k)
      out.segment(3 * static_cast<long>(k), 3) = d.segment(3 * (cfg.observed_nodes[k] - 1), 3);
    out.tail(cfg.m_inputs) = d.tail(cfg.m_inputs);
    return out;
  }

  /// Embedded observation [y(t);u(t);...;y(t−(L−1)dt);u(t−(L−1)dt)] of a full
  /// state, using the exact flow for the history (constant u_ref).
  Eigen::VectorXd embed_state(const Eigen::VectorXd& xi, const Eigen::VectorXd& uref) const {
    const int o = cfg.n_obs(), m = cfg.m_inputs;
    Eigen::VectorXd out(L * (o + m));
    Eigen::VectorXd x = xi;
    for (int lag = 0; lag < L; ++lag) {
      const Observation ob = lp.observe(x, uref, 0.0);
      out.segment(lag * (o + m), o) = ob.y;
      out.segment(lag * (o + m) + o, m) = ob.u;
      if (lag + 1 < L) x = lp.step(x, uref, -dt);
    }
    return out;
  }
};

/// Decay + low-amplitude calibration data for the default nonlinear plant.
struct DefaultData {
  ExperimentConfig cfg;
  std::vector<Trajectory> decays;
  std::vector<Trajectory> calibration;

  DefaultData() : cfg(default_experiment()) {
    DecayProtocol protocol = cfg.protocol;
    protocol.direction_seed = cfg.seed;
    decays = collect_decays(cfg.plant, protocol, nullptr);
    const int steps =
        static_cast<int>(std::round(cfg.calibration.duration_s / cfg.protocol.dt));
    for (int k = 0; k < cfg.calibration.n_traj; ++k) {
      const auto inputs = staircase_inputs(cfg.plant.m_inputs, steps, cfg.protocol.dt,
                                           cfg.calibration.hold_s, cfg.calibration.magnitude,
                                           cfg.seed + 5000 + 13ULL * k);
      std::mt19937_64 rng(cfg.seed + 6000 + 17ULL * k);
      Trajectory tr;
      tr.dt = cfg.protocol.dt;
      tr.protocol = "calibration";
      PlantState state = equilibrium_state(cfg.plant);
      for (const Eigen::VectorXd& u : inputs) {
        tr.samples.push_back(observe(state, u, cfg.plant, rng));
        state = advance(state, u, cfg.protocol.dt, cfg.plant);
      }
      calibration.push_back(std::move(tr));
    }
  }
};

}  // namespace cassm::testing

#endif  // CASSM_TESTS_FIXTURES_HPP
