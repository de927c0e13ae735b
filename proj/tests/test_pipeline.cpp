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

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <random>
#include <set>

#include "cassm/pipeline.hpp"

using namespace cassm;
using Eigen::MatrixXd;
using Eigen::VectorXd;

TEST_CASE("zero-magnitude pulses leave the plant at equilibrium") {
  const PlantConfig cfg = default_plant();
  DecayProtocol protocol;
  protocol.n_traj = 1;
  protocol.pulse_magnitude = 0.0;
  protocol.record_horizon = 1.0;
  const auto trajs = collect_decays(cfg, protocol);
  REQUIRE(trajs.size() == 1);
  const VectorXd y0 = trajs[0].samples.front().y;
  for (const Observation& s : trajs[0].samples) {
    CHECK((s.y - y0).norm() < 1e-12);
    CHECK(s.u.norm() < 1e-12);
  }
}

TEST_CASE("default protocol decays below 2% of peak") {
  const PlantConfig cfg = default_plant();
  DecayProtocol protocol;  // spec defaults: 30 pulses of 0.4 s, 4 s horizon
  protocol.n_traj = 6;
  const auto trajs = collect_decays(cfg, protocol);
  const VectorXd y_eq = equilibrium_observation(cfg);
  for (const Trajectory& traj : trajs) {
    double peak = 0.0;
    for (const Observation& s : traj.samples) peak = std::max(peak, (s.y - y_eq).norm());
    CHECK((traj.samples.back().y - y_eq).norm() < 0.02 * peak);
  }
}

TEST_CASE("actuator channel during decay follows the closed-form lag") {
  PlantConfig cfg = default_plant();
  cfg.noise_std = 0.0;
  DecayProtocol protocol;
  protocol.n_traj = 2;
  const auto trajs = collect_decays(cfg, protocol);
  for (const Trajectory& traj : trajs) {
    const Trajectory rel = release_phase(traj);
    REQUIRE(rel.samples.size() > 10);
    const VectorXd u0 = rel.samples.front().u;
    for (std::size_t k = 1; k < rel.samples.size(); ++k) {
      const double t = rel.samples[k].t - rel.samples.front().t;
      // Λ_true = −4·I, so the actuator row has a scalar closed form.
      const VectorXd expected = std::exp(-4.0 * t) * u0;
      if (expected.norm() < 1e-6) break;
      CHECK((rel.samples[k].u - expected).norm() < 1e-3 * u0.norm());
    }
  }
}

TEST_CASE("determinism: identical seeds give bit-identical trajectories") {
  PlantConfig cfg = default_plant();
  cfg.noise_std = 2e-4;
  DecayProtocol protocol;
  protocol.n_traj = 2;
  protocol.record_horizon = 1.0;
  const auto a = collect_decays(cfg, protocol);
  const auto b = collect_decays(cfg, protocol);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < a[i].samples.size(); ++k) {
      CHECK(a[i].samples[k].y == b[i].samples[k].y);
      CHECK(a[i].samples[k].u == b[i].samples[k].u);
    }
}

TEST_CASE("kalman smoothing: degenerate filter passes measurements through") {
  Trajectory traj;
  traj.dt = 0.02;
  std::mt19937_64 rng(5);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int k = 0; k < 100; ++k) {
    Observation s;
    s.t = 0.02 * k;
    s.y = VectorXd::Zero(2);
    s.y << normal(rng), std::sin(0.3 * k);
    s.u = VectorXd::Zero(1);
    s.u_ref = VectorXd::Zero(1);
    traj.samples.push_back(s);
  }
  const Trajectory smoothed = kalman_rts_smooth(traj, 1e4, 1e-12);
  for (std::size_t k = 0; k < traj.samples.size(); ++k)
    CHECK((smoothed.samples[k].y - traj.samples[k].y).norm() < 1e-9);
}

TEST_CASE("kalman smoothing halves sine measurement noise without phase lag") {
  // marker-scale sine (10 mm amplitude) with 1 mm measurement noise
  const double sigma = 1e-3;
  const double amplitude = 0.01;
  const double dt = 0.02;
  const int n = 500;
  std::mt19937_64 rng(7);
  std::normal_distribution<double> noise(0.0, sigma);
  Trajectory traj;
  traj.dt = dt;
  std::vector<double> clean(n);
  for (int k = 0; k < n; ++k) {
    clean[k] = amplitude * std::sin(2.0 * std::numbers::pi * k * dt);
    Observation s;
    s.t = k * dt;
    s.y = VectorXd::Constant(1, clean[k] + noise(rng));
    s.u = VectorXd::Zero(1);
    s.u_ref = VectorXd::Zero(1);
    traj.samples.push_back(s);
  }
  const Trajectory smoothed = kalman_rts_smooth(traj, 0.01, sigma * sigma);
  double ss = 0.0;
  for (int k = 0; k < n; ++k) ss += std::pow(smoothed.samples[k].y(0) - clean[k], 2);
  CHECK(std::sqrt(ss / n) < 0.5 * sigma);

  // cross-correlation against the clean signal peaks at lag zero
  auto xcorr = [&](int lag) {
    double s = 0.0;
    for (int k = std::max(0, -lag); k < n - std::max(0, lag); ++k)
      s += smoothed.samples[k + lag].y(0) * clean[k];
    return s;
  };
  const double at_zero = xcorr(0);
  for (int lag : {-3, -2, -1, 1, 2, 3}) CHECK(at_zero >= xcorr(lag));
}

TEST_CASE("delay embedding layout and edge cases") {
  Trajectory traj;
  traj.dt = 0.02;
  for (int k = 0; k < 10; ++k) {
    Observation s;
    s.t = 0.02 * k;
    s.y = VectorXd::Constant(9, static_cast<double>(k));
    s.u = VectorXd::Constant(2, 10.0 + k);
    s.u_ref = VectorXd::Zero(2);
    traj.samples.push_back(s);
  }

  const EmbeddedSeries e1 = delay_embed(traj, 1);
  CHECK(e1.X.rows() == 11);
  CHECK(e1.X.cols() == 10);
  CHECK(e1.X(0, 3) == 3.0);
  CHECK(e1.X(9, 3) == 13.0);

  const EmbeddedSeries e2 = delay_embed(traj, 2);
  CHECK(e2.X.rows() == 22);  // L(o+m) = 2·11, the configured embedded dimension
  CHECK(e2.X.cols() == 9);
  // column k holds [y(t); u(t); y(t−dt); u(t−dt)]
  CHECK(e2.X(0, 0) == 1.0);
  CHECK(e2.X(11, 0) == 0.0);
  CHECK(e2.X(20, 0) == 10.0);

  CHECK_THROWS_AS(delay_embed(traj, 0), std::invalid_argument);
  Trajectory tiny;
  tiny.samples = {traj.samples[0]};
  CHECK_THROWS_AS(delay_embed(tiny, 2), std::invalid_argument);

  // constant trajectory: all lag blocks identical
  Trajectory constant = traj;
  for (Observation& s : constant.samples) {
    s.y.setConstant(1.5);
    s.u.setConstant(-0.5);
  }
  const EmbeddedSeries ec = delay_embed(constant, 3);
  for (long c = 0; c < ec.X.cols(); ++c)
    for (int lag = 1; lag < 3; ++lag)
      CHECK((ec.X.col(c).segment(lag * 11, 11) - ec.X.col(c).head(11)).norm() == 0.0);
}

TEST_CASE("embedding block 0 equals the source observation") {
  PlantConfig cfg = default_plant();
  cfg.noise_std = 2e-4;
  DecayProtocol protocol;
  protocol.n_traj = 1;
  protocol.record_horizon = 1.0;
  const auto trajs = collect_decays(cfg, protocol);
  const EmbeddedSeries emb = delay_embed(trajs[0], 2);
  for (long c = 0; c < emb.X.cols(); ++c) {
    const Observation& src = trajs[0].samples[c + 1];
    CHECK((emb.X.col(c).head(9) - src.y).norm() == 0.0);
    CHECK((emb.X.col(c).segment(9, 2) - src.u).norm() == 0.0);
  }
}

TEST_CASE("derivative estimation orders") {
  const double dt = 0.02;
  const int n = 50;

  MatrixXd quad(1, n), sine(1, n), flat(1, n);
  for (int k = 0; k < n; ++k) {
    const double t = k * dt;
    quad(0, k) = t * t;
    sine(0, k) = std::sin(10.0 * t);
    flat(0, k) = 3.25;
  }

  const MatrixXd dq = estimate_derivatives(quad, dt);
  for (int k = 2; k < n - 2; ++k) CHECK(std::abs(dq(0, k) - 2.0 * k * dt) < 1e-10);

  const MatrixXd ds = estimate_derivatives(sine, dt);
  double worst = 0.0;
  for (int k = 2; k < n - 2; ++k)
    worst = std::max(worst, std::abs(ds(0, k) - 10.0 * std::cos(10.0 * k * dt)));
  CHECK(worst < std::pow(10.0 * dt, 4));

  const MatrixXd df = estimate_derivatives(flat, dt);
  CHECK(df.cwiseAbs().maxCoeff() < 1e-12);

  MatrixXd too_short(1, 4);
  too_short.setZero();
  CHECK_THROWS_AS(estimate_derivatives(too_short, dt), std::invalid_argument);
}

TEST_CASE("normalization round trip is identity") {
  PlantConfig cfg = default_plant();
  cfg.noise_std = 2e-4;
  DecayProtocol protocol;
  protocol.n_traj = 3;
  protocol.record_horizon = 2.0;
  const auto trajs = collect_decays(cfg, protocol);
  std::vector<EmbeddedSeries> embs;
  for (const Trajectory& t : trajs) embs.push_back(delay_embed(t, 2));
  const Normalization norm = fit_normalization(embs, 0.25, protocol.dt);
  const VectorXd x = embs[0].X.col(4);
  CHECK((norm.invert(norm.apply(x)) - x).norm() < 1e-12 * std::max(1.0, x.norm()));
  // block-uniform scales: all y coordinates share one scale, u another
  CHECK(norm.scale(0) == norm.scale(8));
  CHECK(norm.scale(9) == norm.scale(10));
  CHECK(norm.scale(0) == norm.scale(11));
}

TEST_CASE("dataset split is trajectory-disjoint") {
  std::vector<Trajectory> trajs(20);
  for (int i = 0; i < 20; ++i) {
    trajs[i].seed = 1000 + i;
    trajs[i].samples.resize(1);
    trajs[i].samples[0].y = VectorXd::Constant(1, i);
    trajs[i].samples[0].u = VectorXd::Zero(1);
    trajs[i].samples[0].u_ref = VectorXd::Zero(1);
  }
  const Dataset ds = split_dataset(trajs, 0.7, 0.15, 99);
  std::set<std::uint64_t> seen;
  for (const auto* part : {&ds.train, &ds.validation, &ds.test})
    for (const Trajectory& t : *part) CHECK(seen.insert(t.seed).second);
  CHECK(seen.size() == 20);
  CHECK(ds.train.size() == 14);
}

TEST_CASE("trajectory CSV round trip") {
  PlantConfig cfg = default_plant();
  cfg.noise_std = 2e-4;
  DecayProtocol protocol;
  protocol.n_traj = 1;
  protocol.record_horizon = 0.5;
  const auto trajs = collect_decays(cfg, protocol);
  const std::string path =
      (std::filesystem::temp_directory_path() / "cassm_traj_test.csv").string();
  write_trajectory_csv(path, trajs[0]);
  const Trajectory back = read_trajectory_csv(path);
  REQUIRE(back.samples.size() == trajs[0].samples.size());
  for (std::size_t k = 0; k < back.samples.size(); ++k) {
    CHECK((back.samples[k].y - trajs[0].samples[k].y).cwiseAbs().maxCoeff() < 1e-15);
    CHECK((back.samples[k].u_ref - trajs[0].samples[k].u_ref).cwiseAbs().maxCoeff() < 1e-15);
  }
  std::remove(path.c_str());
}
