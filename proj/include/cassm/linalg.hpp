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

#ifndef CASSM_LINALG_HPP
#define CASSM_LINALG_HPP

#include <Eigen/Dense>

namespace cassm {

/// Moore–Penrose pseudoinverse via SVD with relative singular-value cutoff.
Eigen::MatrixXd pinv(const Eigen::MatrixXd& A, double rel_tol = 1e-12);

/// True if all eigenvalues have strictly negative real part. Optionally
/// reports the maximum real part.
bool is_hurwitz(const Eigen::MatrixXd& A, double* max_re = nullptr);

/// Orthonormal real basis of the invariant subspace of the n_slow
/// slowest-decaying modes (eigenvalues ordered by real part, descending).
/// Handles degenerate eigenspaces by rank-validated accumulation; throws
/// std::invalid_argument when n_slow splits an eigenspace.
Eigen::MatrixXd slow_mode_basis(const Eigen::MatrixXd& A, int n_slow);

struct RidgeFit {
  Eigen::MatrixXd coeffs;  ///< out × features
  double condition = 0.0;  ///< condition estimate of the regularized Gram
};

/// Ridge least squares for C minimizing (1/N)‖C·Phi − Y‖_F² + λ‖C‖_F², with
/// Phi features×samples and Y out×samples; λ is per-sample (the Gram is
/// normalized by the sample count).
RidgeFit ridge_fit(const Eigen::MatrixXd& Phi, const Eigen::MatrixXd& Y, double lambda);

}  // namespace cassm

#endif  // CASSM_LINALG_HPP
