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

#include "cassm/features.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>
#include <vector>

namespace cassm {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

// Exponent tuples of total degree d over n variables, graded-lex order:
// first variable's exponent decreasing, recursively.
void enumerate_exponents(int n, int d, std::vector<int>& current,
                         std::vector<std::vector<int>>& out) {
  if (n == 1) {
    current.push_back(d);
    out.push_back(current);
    current.pop_back();
    return;
  }
  for (int e = d; e >= 0; --e) {
    current.push_back(e);
    enumerate_exponents(n - 1, d - e, current, out);
    current.pop_back();
  }
}

std::vector<std::vector<int>> exponent_table(int n, int degree_lo, int degree_hi) {
  std::vector<std::vector<int>> table;
  std::vector<int> scratch;
  for (int d = degree_lo; d <= degree_hi; ++d) enumerate_exponents(n, d, scratch, table);
  return table;
}

long binomial(long n, long k) {
  if (k < 0 || k > n) return 0;
  long r = 1;
  for (long i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

}  // namespace

long poly_feature_count(int n, int degree_lo, int degree_hi) {
  if (n < 1) throw std::invalid_argument("poly_features: input dimension must be >= 1");
  if (degree_lo < 2 || degree_lo > degree_hi)
    throw std::invalid_argument("poly_features: require 2 <= degree_lo <= degree_hi");
  long total = 0;
  for (int d = degree_lo; d <= degree_hi; ++d) {
    total += binomial(n + d - 1, d);
    if (total > 1000000L)
      throw std::invalid_argument("poly_features: feature count exceeds 10^6");
  }
  return total;
}

VectorXd poly_features(const VectorXd& z, int degree_lo, int degree_hi) {
  const int n = static_cast<int>(z.size());
  const long count = poly_feature_count(n, degree_lo, degree_hi);
  const auto table = exponent_table(n, degree_lo, degree_hi);
  VectorXd phi(count);
  for (std::size_t k = 0; k < table.size(); ++k) {
    double v = 1.0;
    for (int i = 0; i < n; ++i)
      for (int e = 0; e < table[k][i]; ++e) v *= z(i);
    phi(static_cast<long>(k)) = v;
  }
  return phi;
}

MatrixXd poly_feature_jacobian(const VectorXd& z, int degree_lo, int degree_hi) {
  const int n = static_cast<int>(z.size());
  const long count = poly_feature_count(n, degree_lo, degree_hi);
  const auto table = exponent_table(n, degree_lo, degree_hi);
  MatrixXd jac = MatrixXd::Zero(count, n);
  for (std::size_t k = 0; k < table.size(); ++k) {
    for (int j = 0; j < n; ++j) {
      const int ej = table[k][j];
      if (ej == 0) continue;
      double v = static_cast<double>(ej);
      for (int i = 0; i < n; ++i) {
        const int e = (i == j) ? table[k][i] - 1 : table[k][i];
        for (int r = 0; r < e; ++r) v *= z(i);
      }
      jac(static_cast<long>(k), j) = v;
    }
  }
  return jac;
}

std::pair<MatrixXd, VectorXd> rff_sample(int n, int D, double lengthscale, std::uint64_t seed) {
  if (D < 1) throw std::invalid_argument("rff_sample: D must be >= 1");
  if (lengthscale <= 0.0) throw std::invalid_argument("rff_sample: lengthscale must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0 / lengthscale);
  std::uniform_real_distribution<double> uniform(0.0, 2.0 * std::numbers::pi);
  MatrixXd omega(D, n);
  for (int i = 0; i < D; ++i)
    for (int j = 0; j < n; ++j) omega(i, j) = normal(rng);
  VectorXd bias(D);
  for (int i = 0; i < D; ++i) bias(i) = uniform(rng);
  return {omega, bias};
}

VectorXd rff_features(const VectorXd& z, const MatrixXd& omega, const VectorXd& bias) {
  const double scale = std::sqrt(2.0 / static_cast<double>(omega.rows()));
  return scale * ((omega * z + bias).array().cos()).matrix();
}

MatrixXd rff_feature_jacobian(const VectorXd& z, const MatrixXd& omega, const VectorXd& bias) {
  const double scale = std::sqrt(2.0 / static_cast<double>(omega.rows()));
  const VectorXd s = ((omega * z + bias).array().sin()).matrix();
  return (-scale) * s.asDiagonal() * omega;
}

FeatureMapSpec FeatureMapSpec::polynomial(int input_dim, int degree_lo, int degree_hi) {
  FeatureMapSpec spec;
  spec.kind = Kind::polynomial;
  spec.input_dim = input_dim;
  spec.degree_lo = degree_lo;
  spec.degree_hi = degree_hi;
  poly_feature_count(input_dim, degree_lo, degree_hi);
  return spec;
}

FeatureMapSpec FeatureMapSpec::rff(int input_dim, int count, double lengthscale,
                                   std::uint64_t seed) {
  FeatureMapSpec spec;
  spec.kind = Kind::rff;
  spec.input_dim = input_dim;
  spec.rff_count = count;
  spec.rff_lengthscale = lengthscale;
  spec.rff_seed = seed;
  std::tie(spec.omega, spec.bias) = rff_sample(input_dim, count, lengthscale, seed);
  return spec;
}

int FeatureMapSpec::output_dim() const {
  if (kind == Kind::polynomial)
    return static_cast<int>(poly_feature_count(input_dim, degree_lo, degree_hi));
  return rff_count;
}

VectorXd FeatureMapSpec::eval(const VectorXd& z) const {
  if (z.size() != input_dim)
    throw std::invalid_argument("FeatureMapSpec::eval: input dimension mismatch");
  if (kind == Kind::polynomial) return poly_features(z, degree_lo, degree_hi);
  return rff_features(z, omega, bias);
}

MatrixXd FeatureMapSpec::jacobian(const VectorXd& z) const {
  if (z.size() != input_dim)
    throw std::invalid_argument("FeatureMapSpec::jacobian: input dimension mismatch");
  if (kind == Kind::polynomial) return poly_feature_jacobian(z, degree_lo, degree_hi);
  return rff_feature_jacobian(z, omega, bias);
}

VectorXd FeatureMapSpec::eval_centered(const VectorXd& z) const {
  return eval(z) - eval(VectorXd::Zero(input_dim));
}

MatrixXd FeatureMapSpec::eval_centered_batch(const MatrixXd& Z) const {
  const VectorXd phi0 = eval(VectorXd::Zero(input_dim));
  MatrixXd out(output_dim(), Z.cols());
  for (long k = 0; k < Z.cols(); ++k) out.col(k) = eval(Z.col(k)) - phi0;
  return out;
}

}  // namespace cassm
