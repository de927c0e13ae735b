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

#ifndef CASSM_FEATURES_HPP
#define CASSM_FEATURES_HPP

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <utility>

namespace cassm {

/// Number of monomials of total degree in [degree_lo, degree_hi] over n
/// variables. Throws std::invalid_argument when the count exceeds 10^6.
long poly_feature_count(int n, int degree_lo, int degree_hi);

/// All monomials of z with total degree in [degree_lo, degree_hi], ordered
/// by total degree ascending and graded-lexicographically within a degree
/// (exponent of z1 decreasing first). The ordering is stable across runs
/// and serialization.
Eigen::VectorXd poly_features(const Eigen::VectorXd& z, int degree_lo, int degree_hi);

/// Analytic Jacobian of poly_features, n_phi × n.
Eigen::MatrixXd poly_feature_jacobian(const Eigen::VectorXd& z, int degree_lo, int degree_hi);

/// Frozen random-Fourier-feature frequencies and phases: ω is D×n with rows
/// i.i.d. N(0, ℓ⁻²I), b is D with entries i.i.d. Uniform[0, 2π). Deterministic
/// for a given seed.
std::pair<Eigen::MatrixXd, Eigen::VectorXd> rff_sample(int n, int D, double lengthscale,
                                                       std::uint64_t seed);

/// φ(z) = sqrt(2/D)·cos(ωz + b), elementwise.
Eigen::VectorXd rff_features(const Eigen::VectorXd& z, const Eigen::MatrixXd& omega,
                             const Eigen::VectorXd& bias);

/// Analytic Jacobian −sqrt(2/D)·diag(sin(ωz + b))·ω, D × n.
Eigen::MatrixXd rff_feature_jacobian(const Eigen::VectorXd& z, const Eigen::MatrixXd& omega,
                                     const Eigen::VectorXd& bias);

/**
 * @brief A frozen feature map used for the fitted nonlinear terms of the
 * reduced models. RFF frequencies/phases are sampled once and serialized
 * verbatim, never resampled.
 */
struct FeatureMapSpec {
  enum class Kind { polynomial, rff };

  Kind kind = Kind::rff;
  int input_dim = 0;

  // polynomial
  int degree_lo = 2;
  int degree_hi = 2;

  // rff
  int rff_count = 512;
  double rff_lengthscale = 1.0;
  std::uint64_t rff_seed = 0;
  Eigen::MatrixXd omega;
  Eigen::VectorXd bias;

  static FeatureMapSpec polynomial(int input_dim, int degree_lo, int degree_hi);
  static FeatureMapSpec rff(int input_dim, int count, double lengthscale, std::uint64_t seed);

  int output_dim() const;
  Eigen::VectorXd eval(const Eigen::VectorXd& z) const;
  Eigen::MatrixXd jacobian(const Eigen::VectorXd& z) const;

  /// eval(z) − eval(0): fitted maps use origin-centered features so the
  /// identified model has an exact fixed point at the equilibrium.
  Eigen::VectorXd eval_centered(const Eigen::VectorXd& z) const;

  /// Feature matrix for a batch (columns are samples), centered.
  Eigen::MatrixXd eval_centered_batch(const Eigen::MatrixXd& Z) const;

  std::string kind_name() const { return kind == Kind::polynomial ? "polynomial" : "rff"; }
};

}  // namespace cassm

#endif  // CASSM_FEATURES_HPP
