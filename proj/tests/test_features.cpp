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
#include <numbers>
#include <random>

#include "cassm/features.hpp"

using namespace cassm;
using Eigen::MatrixXd;
using Eigen::VectorXd;

TEST_CASE("polynomial features: hand expansion and ordering") {
  VectorXd z(2);
  z << 1.0, 2.0;
  const VectorXd phi = poly_features(z, 2, 2);
  REQUIRE(phi.size() == 3);
  CHECK(phi(0) == 1.0);  // z1²
  CHECK(phi(1) == 2.0);  // z1·z2
  CHECK(phi(2) == 4.0);  // z2²

  CHECK(poly_features(VectorXd::Zero(4), 2, 3).cwiseAbs().maxCoeff() == 0.0);
  CHECK(poly_feature_count(5, 2, 2) == 15);

  // ordering is stable across calls
  VectorXd w(3);
  w << 0.3, -1.2, 0.8;
  CHECK((poly_features(w, 2, 4) - poly_features(w, 2, 4)).norm() == 0.0);

  CHECK_THROWS_AS(poly_feature_count(3, 1, 2), std::invalid_argument);
  CHECK_THROWS_AS(poly_feature_count(50, 2, 8), std::invalid_argument);  // > 10^6 guard
}

TEST_CASE("rff sampling statistics and determinism") {
  const auto [omega, bias] = rff_sample(10, 1000, 1.0, 123);
  CHECK(omega.rows() == 1000);
  CHECK(omega.cols() == 10);
  const double std_hat =
      std::sqrt(omega.squaredNorm() / static_cast<double>(omega.size()));
  CHECK(std_hat > 0.95);
  CHECK(std_hat < 1.05);
  CHECK(bias.minCoeff() >= 0.0);
  CHECK(bias.maxCoeff() < 2.0 * std::numbers::pi);

  const auto [omega2, bias2] = rff_sample(10, 1000, 1.0, 123);
  CHECK((omega - omega2).norm() == 0.0);
  CHECK((bias - bias2).norm() == 0.0);
}

TEST_CASE("rff features approximate the RBF kernel") {
  const int n = 5, D = 2048;
  const auto [omega, bias] = rff_sample(n, D, 1.0, 7);
  std::mt19937_64 rng(21);
  std::normal_distribution<double> normal(0.0, 1.0);

  double diag_sum = 0.0;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    VectorXd x(n), y(n);
    for (int i = 0; i < n; ++i) {
      x(i) = normal(rng);
      y(i) = normal(rng);
    }
    const VectorXd px = rff_features(x, omega, bias);
    const VectorXd py = rff_features(y, omega, bias);
    diag_sum += px.squaredNorm();
    const double kernel = std::exp(-(x - y).squaredNorm() / 2.0);
    worst = std::max(worst, std::abs(px.dot(py) - kernel));
  }
  CHECK(std::abs(diag_sum / 100.0 - 1.0) < 0.05);
  CHECK(worst <= 0.1);
}

TEST_CASE("rff degenerate cases") {
  const MatrixXd omega = MatrixXd::Zero(1, 3);
  const VectorXd bias = VectorXd::Zero(1);
  VectorXd z(3);
  z << 5.0, -2.0, 0.1;
  CHECK(rff_features(z, omega, bias)(0) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));
  CHECK(rff_feature_jacobian(z, omega, bias).norm() == 0.0);
}

TEST_CASE("jacobians match central finite differences") {
  std::mt19937_64 rng(31);
  std::normal_distribution<double> normal(0.0, 0.7);
  const double h = 1e-6;
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 2 + trial % 4;
    FeatureMapSpec spec = (trial % 2 == 0)
                              ? FeatureMapSpec::rff(n, 64, 1.0, 100 + trial)
                              : FeatureMapSpec::polynomial(n, 2, 3);
    VectorXd z(n);
    for (int i = 0; i < n; ++i) z(i) = normal(rng);
    const MatrixXd jac = spec.jacobian(z);
    MatrixXd fd(jac.rows(), n);
    for (int j = 0; j < n; ++j) {
      VectorXd zp = z, zm = z;
      zp(j) += h;
      zm(j) -= h;
      fd.col(j) = (spec.eval(zp) - spec.eval(zm)) / (2.0 * h);
    }
    CHECK((jac - fd).norm() / std::max(1.0, fd.norm()) < 1e-6);
  }
}

TEST_CASE("polynomial jacobian vanishes at the origin") {
  const FeatureMapSpec spec = FeatureMapSpec::polynomial(4, 2, 3);
  CHECK(spec.jacobian(VectorXd::Zero(4)).norm() == 0.0);
}

TEST_CASE("kernel error does not grow with more features") {
  const int n = 4;
  std::mt19937_64 rng(77);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<VectorXd> xs, ys;
  for (int i = 0; i < 60; ++i) {
    VectorXd x(n), y(n);
    for (int j = 0; j < n; ++j) {
      x(j) = normal(rng);
      y(j) = normal(rng);
    }
    xs.push_back(x);
    ys.push_back(y);
  }
  auto median_error = [&](int D) {
    const auto [omega, bias] = rff_sample(n, D, 1.0, 5);
    std::vector<double> errs;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const double kernel = std::exp(-(xs[i] - ys[i]).squaredNorm() / 2.0);
      errs.push_back(std::abs(rff_features(xs[i], omega, bias)
                                  .dot(rff_features(ys[i], omega, bias)) -
                              kernel));
    }
    std::sort(errs.begin(), errs.end());
    return errs[errs.size() / 2];
  };
  CHECK(median_error(8192) <= median_error(512));
}

TEST_CASE("centered evaluation vanishes at the origin") {
  const FeatureMapSpec spec = FeatureMapSpec::rff(3, 128, 1.0, 9);
  CHECK(spec.eval_centered(VectorXd::Zero(3)).norm() == 0.0);
  VectorXd z(3);
  z << 0.2, -0.4, 1.0;
  CHECK((spec.eval_centered(z) - (spec.eval(z) - spec.eval(VectorXd::Zero(3)))).norm() == 0.0);
}
