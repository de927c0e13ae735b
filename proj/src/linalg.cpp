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

#include "cassm/linalg.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace cassm {

using Eigen::MatrixXd;
using Eigen::VectorXd;

MatrixXd pinv(const MatrixXd& A, double rel_tol) {
  Eigen::JacobiSVD<MatrixXd> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const VectorXd& s = svd.singularValues();
  const double cutoff = rel_tol * s(0);
  VectorXd inv = VectorXd::Zero(s.size());
  for (long i = 0; i < s.size(); ++i)
    if (s(i) > cutoff) inv(i) = 1.0 / s(i);
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

bool is_hurwitz(const MatrixXd& A, double* max_re) {
  Eigen::EigenSolver<MatrixXd> es(A, false);
  const double mr = es.eigenvalues().real().maxCoeff();
  if (max_re) *max_re = mr;
  return mr < 0.0;
}

MatrixXd slow_mode_basis(const MatrixXd& A, int n_slow) {
  const int dim = static_cast<int>(A.rows());
  if (n_slow < 1 || n_slow > dim)
    throw std::invalid_argument("slow_mode_basis: n_slow out of range");
  Eigen::ComplexEigenSolver<MatrixXd> ces(A);
  if (ces.info() != Eigen::Success)
    throw std::runtime_error("slow_mode_basis: eigensolver failed");
  std::vector<int> order(dim);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return ces.eigenvalues()(a).real() > ces.eigenvalues()(b).real();
  });

  // Accumulate real/imaginary parts of eigenvectors (conjugates skipped)
  // until the span reaches n_slow; degenerate eigenvectors may be complex-
  // proportional, so the rank is validated as blocks are appended.
  MatrixXd cols(dim, 0);
  int rank = 0;
  for (int i = 0; i < dim && rank < n_slow; ++i) {
    const std::complex<double> ev = ces.eigenvalues()(order[i]);
    if (ev.imag() < -1e-12) continue;
    const Eigen::VectorXcd v = ces.eigenvectors().col(order[i]);
    const int add = std::abs(ev.imag()) < 1e-12 ? 1 : 2;
    MatrixXd grown(dim, cols.cols() + add);
    grown.leftCols(cols.cols()) = cols;
    grown.col(cols.cols()) = v.real();
    if (add == 2) grown.col(cols.cols() + 1) = v.imag();
    Eigen::ColPivHouseholderQR<MatrixXd> qr(grown);
    qr.setThreshold(1e-9);
    const int new_rank = static_cast<int>(qr.rank());
    cols = std::move(grown);
    rank = new_rank;
  }
  if (rank < n_slow)
    throw std::runtime_error("slow_mode_basis: could not reach the requested dimension");
  if (rank > n_slow)
    throw std::invalid_argument("slow_mode_basis: n_slow splits an eigenspace");
  Eigen::ColPivHouseholderQR<MatrixXd> qr(cols);
  qr.setThreshold(1e-9);
  MatrixXd q = qr.householderQ() * MatrixXd::Identity(dim, n_slow);
  return q;
}

RidgeFit ridge_fit(const MatrixXd& Phi, const MatrixXd& Y, double lambda) {
  const double n = static_cast<double>(Phi.cols());
  MatrixXd gram = Phi * Phi.transpose() / n;
  gram.diagonal().array() += lambda;
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(gram, Eigen::EigenvaluesOnly);
  RidgeFit fit;
  const double lo = es.eigenvalues().minCoeff();
  fit.condition = lo > 0.0 ? es.eigenvalues().maxCoeff() / lo
                           : std::numeric_limits<double>::infinity();
  Eigen::LDLT<MatrixXd> ldlt(gram);
  fit.coeffs = ldlt.solve(Phi * Y.transpose() / n).transpose();
  return fit;
}

}  // namespace cassm
