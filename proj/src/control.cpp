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

#include "cassm/control.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "cassm/linalg.hpp"

namespace cassm {

using Eigen::MatrixXcd;
using Eigen::MatrixXd;
using Eigen::VectorXcd;
using Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Riccati / feedback design
// ---------------------------------------------------------------------------

MatrixXd solve_care(const MatrixXd& A, const MatrixXd& B, const MatrixXd& Q, const MatrixXd& R) {
  const int n = static_cast<int>(A.rows());
  const MatrixXd Rinv = R.llt().solve(MatrixXd::Identity(R.rows(), R.cols()));
  MatrixXd H(2 * n, 2 * n);
  H.topLeftCorner(n, n) = A;
  H.topRightCorner(n, n) = -B * Rinv * B.transpose();
  H.bottomLeftCorner(n, n) = -Q;
  H.bottomRightCorner(n, n) = -A.transpose();

  Eigen::ComplexEigenSolver<MatrixXd> ces(H);
  if (ces.info() != Eigen::Success) throw std::runtime_error("solve_care: eigensolver failed");

  MatrixXcd basis(2 * n, n);
  int count = 0;
  for (int i = 0; i < 2 * n; ++i) {
    if (ces.eigenvalues()(i).real() < 0.0) {
      if (count < n) basis.col(count) = ces.eigenvectors().col(i);
      ++count;
    }
  }
  if (count != n)
    throw std::runtime_error(
        "solve_care: Hamiltonian has no n-dimensional stable subspace (pair not stabilizable?)");

  const MatrixXcd X = basis.topRows(n);
  const MatrixXcd Y = basis.bottomRows(n);
  const MatrixXcd Pc = X.transpose().fullPivLu().solve(Y.transpose()).transpose();
  MatrixXd P = Pc.real();
  P = 0.5 * (P + P.transpose()).eval();

  const MatrixXd residual =
      A.transpose() * P + P * A - P * B * Rinv * B.transpose() * P + Q;
  if (residual.norm() > 1e-6 * (1.0 + P.norm() * P.norm()))
    throw std::runtime_error("solve_care: Riccati residual check failed");
  return P;
}

MatrixXd lqr_gain(const MatrixXd& A, const MatrixXd& B, const MatrixXd& Q, const MatrixXd& R) {
  const MatrixXd P = solve_care(A, B, Q, R);
  return -R.llt().solve(B.transpose() * P);
}

namespace {

// PBH controllability test of an unstable eigenvalue.
void check_stabilizable(const MatrixXd& A, const MatrixXd& B) {
  const int n = static_cast<int>(A.rows());
  Eigen::ComplexEigenSolver<MatrixXd> ces(A);
  for (int i = 0; i < n; ++i) {
    const std::complex<double> lambda = ces.eigenvalues()(i);
    if (lambda.real() < 0.0) continue;
    MatrixXcd pencil(n, n + B.cols());
    pencil.leftCols(n) = A.cast<std::complex<double>>() - lambda * MatrixXcd::Identity(n, n);
    pencil.rightCols(B.cols()) = B.cast<std::complex<double>>();
    Eigen::JacobiSVD<MatrixXcd> svd(pencil);
    const VectorXd s = svd.singularValues();
    if (s(n - 1) < 1e-9 * s(0)) {
      std::ostringstream os;
      os << "design_feedback: unstable mode " << lambda.real();
      if (std::abs(lambda.imag()) > 0.0) os << (lambda.imag() > 0 ? "+" : "") << lambda.imag() << "i";
      os << " is uncontrollable";
      throw std::invalid_argument(os.str());
    }
  }
}

double spectral_norm(const MatrixXd& M) {
  Eigen::JacobiSVD<MatrixXd> svd(M);
  return svd.singularValues()(0);
}

}  // namespace

FeedbackDesign design_feedback(const MatrixXd& A_unstable, const MatrixXd& A_u,
                               const MatrixXd& Lambda) {
  const int n = static_cast<int>(A_unstable.rows());
  const int m = static_cast<int>(Lambda.rows());
  if (A_u.rows() != n || A_u.cols() != m)
    throw std::invalid_argument("design_feedback: A_u must be n×m");

  FeedbackDesign design;
  // Λ ⪯ −β·I via the symmetric part.
  Eigen::SelfAdjointEigenSolver<MatrixXd> sym(0.5 * (Lambda + Lambda.transpose()));
  design.beta = -sym.eigenvalues().maxCoeff();
  if (design.beta <= 0.0)
    throw std::invalid_argument("design_feedback: Lambda must satisfy Λ ⪯ −β·I with β > 0");

  check_stabilizable(A_unstable, A_u);
  design.K = lqr_gain(A_unstable, A_u, MatrixXd::Identity(n, n), MatrixXd::Identity(m, m));
  design.margin = spectral_norm(design.K * A_u);
  design.H = design.K * A_unstable - Lambda * design.K + design.K * A_u * design.K;

  MatrixXd aug(n + m, n + m);
  aug.topLeftCorner(n, n) = A_unstable;
  aug.topRightCorner(n, m) = A_u;
  aug.bottomLeftCorner(m, n) = design.H;
  aug.bottomRightCorner(m, m) = Lambda;
  Eigen::EigenSolver<MatrixXd> es(aug, false);
  design.augmented_spectrum = es.eigenvalues();

  if (design.margin >= design.beta) {
    std::ostringstream os;
    os << "actuator bandwidth insufficient: ‖K·A_u‖₂ = " << design.margin
       << " does not clear β = " << design.beta;
    design.ok = false;
    design.message = os.str();
    return design;
  }
  design.ok = design.augmented_spectrum.real().maxCoeff() < 0.0;
  design.message = design.ok ? "stabilized" : "augmented matrix not Hurwitz";
  return design;
}

VectorXd feedback_filter_response(const MatrixXd& H, const MatrixXd& Lambda,
                                  const VectorXd& omegas) {
  const int m = static_cast<int>(Lambda.rows());
  double max_re = 0.0;
  if (!is_hurwitz(Lambda, &max_re))
    throw std::invalid_argument("feedback_filter_response: Lambda must be Hurwitz");

  auto gain_at = [&](double w) {
    const MatrixXcd M = std::complex<double>(0.0, w) * MatrixXcd::Identity(m, m) -
                        Lambda.cast<std::complex<double>>();
    const MatrixXcd K = M.fullPivLu().solve(H.cast<std::complex<double>>());
    Eigen::JacobiSVD<MatrixXcd> svd(K);
    return svd.singularValues()(0);
  };

  // DC identity K(0) = −Λ⁻¹H.
  {
    const MatrixXcd K0c = (-Lambda.cast<std::complex<double>>())
                              .fullPivLu()
                              .solve(H.cast<std::complex<double>>());
    const MatrixXd K0_direct = -Lambda.fullPivLu().solve(H);
    if ((K0c.real() - K0_direct).norm() > 1e-10 * (1.0 + K0_direct.norm()) ||
        K0c.imag().norm() > 1e-10)
      throw std::runtime_error("feedback_filter_response: DC identity check failed");
  }

  Eigen::EigenSolver<MatrixXd> es(Lambda, false);
  const double beta = es.eigenvalues().real().cwiseAbs().minCoeff();

  VectorXd gains(omegas.size());
  for (long i = 0; i < omegas.size(); ++i) gains(i) = gain_at(omegas(i));

  for (long i = 0; i + 1 < omegas.size(); ++i) {
    if (omegas(i) > 10.0 * beta && omegas(i + 1) > omegas(i) &&
        gains(i + 1) > gains(i) * (1.0 + 1e-9))
      throw std::runtime_error(
          "feedback_filter_response: gain not monotonically decaying beyond 10·β");
  }
  return gains;
}

// ---------------------------------------------------------------------------
// ROM adapters
// ---------------------------------------------------------------------------

namespace {

// RK4 step with forward sensitivities for ẋ = g(x) + Σ_j M_j·u_j, where the
// input gains M_j are constant and inputs are held over the step.
void rk4_with_sensitivity(const std::function<VectorXd(const VectorXd&)>& g,
                          const std::function<MatrixXd(const VectorXd&)>& gz,
                          const std::vector<MatrixXd>& M,
                          const std::vector<VectorXd>& u_lags, const VectorXd& x, double dt,
                          VectorXd* x_next, MatrixXd* A, std::vector<MatrixXd>* B) {
  const int n = static_cast<int>(x.size());
  const std::size_t lags = M.size();
  VectorXd drive = VectorXd::Zero(n);
  for (std::size_t j = 0; j < lags; ++j) drive += M[j] * u_lags[j];
  auto f = [&](const VectorXd& xx) { return (g(xx) + drive).eval(); };

  const VectorXd k1 = f(x);
  const VectorXd x2 = x + 0.5 * dt * k1;
  const VectorXd k2 = f(x2);
  const VectorXd x3 = x + 0.5 * dt * k2;
  const VectorXd k3 = f(x3);
  const VectorXd x4 = x + dt * k3;
  const VectorXd k4 = f(x4);
  if (x_next) *x_next = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  if (!A && !B) return;

  const MatrixXd D1 = gz(x);
  const MatrixXd D2 = gz(x2);
  const MatrixXd D3 = gz(x3);
  const MatrixXd D4 = gz(x4);
  const MatrixXd I = MatrixXd::Identity(n, n);
  const MatrixXd dk2 = D2 * (I + 0.5 * dt * D1);
  const MatrixXd dk3 = D3 * (I + 0.5 * dt * dk2);
  const MatrixXd dk4 = D4 * (I + dt * dk3);
  if (A) *A = I + (dt / 6.0) * (D1 + 2.0 * dk2 + 2.0 * dk3 + dk4);
  if (B) {
    B->resize(lags);
    for (std::size_t j = 0; j < lags; ++j) {
      const MatrixXd& Mj = M[j];
      const MatrixXd b2 = D2 * (0.5 * dt * Mj) + Mj;
      const MatrixXd b3 = D3 * (0.5 * dt * b2) + Mj;
      const MatrixXd b4 = D4 * (dt * b3) + Mj;
      (*B)[j] = (dt / 6.0) * (Mj + 2.0 * b2 + 2.0 * b3 + b4);
    }
  }
}

}  // namespace

VectorXd CassmRom::encode_window(const std::vector<Observation>& window) const {
  if (static_cast<int>(window.size()) < model_.dims.L)
    throw std::invalid_argument("CassmRom: window shorter than the embedding depth");
  const int block = model_.dims.o + model_.dims.m;
  VectorXd x(model_.dims.embedded_dim());
  for (int lag = 0; lag < model_.dims.L; ++lag) {
    x.segment(lag * block, model_.dims.o) = window[lag].y;
    x.segment(lag * block + model_.dims.o, model_.dims.m) = window[lag].u;
  }
  return encode(model_, x);
}

namespace {

std::vector<MatrixXd> cassm_input_gains(const ManifoldModel& model) {
  std::vector<MatrixXd> M;
  if (model.ref_mode == RefMode::exact) {
    for (int lag = 0; lag < model.dims.L; ++lag) M.push_back(control_reference_gain(model, lag));
  } else {
    M.push_back(control_reference_gain_total(model));
  }
  return M;
}

}  // namespace

VectorXd CassmRom::step(const VectorXd& x, const std::vector<VectorXd>& u_lags, double dt) const {
  VectorXd next;
  rk4_with_sensitivity(
      [&](const VectorXd& z) {
        return (model_.R0 * z + model_.theta_r * model_.r_spec.eval_centered(z)).eval();
      },
      [&](const VectorXd& z) { return reduced_jacobian(model_, z); }, cassm_input_gains(model_),
      u_lags, x, dt, &next, nullptr, nullptr);
  return next;
}

void CassmRom::step_jacobians(const VectorXd& x, const std::vector<VectorXd>& u_lags, double dt,
                              MatrixXd& A, std::vector<MatrixXd>& B_lags) const {
  VectorXd next;
  rk4_with_sensitivity(
      [&](const VectorXd& z) {
        return (model_.R0 * z + model_.theta_r * model_.r_spec.eval_centered(z)).eval();
      },
      [&](const VectorXd& z) { return reduced_jacobian(model_, z); }, cassm_input_gains(model_),
      u_lags, x, dt, &next, &A, &B_lags);
}

VectorXd CassmRom::observation(const VectorXd& x) const { return decode_observation(model_, x); }

MatrixXd CassmRom::observation_jacobian(const VectorXd& x) const {
  return decode_observation_jacobian(model_, x);
}

VectorXd OssmRom::encode_window(const std::vector<Observation>& window) const {
  if (static_cast<int>(window.size()) < model_.L)
    throw std::invalid_argument("OssmRom: window shorter than the embedding depth");
  VectorXd x(model_.L * model_.o);
  for (int lag = 0; lag < model_.L; ++lag) x.segment(lag * model_.o, model_.o) = window[lag].y;
  return model_.V.transpose() * model_.norm.apply(x);
}

VectorXd OssmRom::step(const VectorXd& x, const std::vector<VectorXd>& u_lags, double dt) const {
  VectorXd next;
  rk4_with_sensitivity(
      [&](const VectorXd& z) {
        return (model_.R0 * z + model_.R_nl * model_.r_spec.eval_centered(z)).eval();
      },
      [&](const VectorXd& z) {
        return (model_.R0 + model_.R_nl * model_.r_spec.jacobian(z)).eval();
      },
      {model_.B_r}, u_lags, x, dt, &next, nullptr, nullptr);
  return next;
}

void OssmRom::step_jacobians(const VectorXd& x, const std::vector<VectorXd>& u_lags, double dt,
                             MatrixXd& A, std::vector<MatrixXd>& B_lags) const {
  VectorXd next;
  rk4_with_sensitivity(
      [&](const VectorXd& z) {
        return (model_.R0 * z + model_.R_nl * model_.r_spec.eval_centered(z)).eval();
      },
      [&](const VectorXd& z) {
        return (model_.R0 + model_.R_nl * model_.r_spec.jacobian(z)).eval();
      },
      {model_.B_r}, u_lags, x, dt, &next, &A, &B_lags);
}

VectorXd OssmRom::observation(const VectorXd& x) const {
  const VectorXd xn = model_.V * x + model_.W_nl * model_.w_spec.eval_centered(x);
  return model_.norm.invert(xn).head(model_.o);
}

MatrixXd OssmRom::observation_jacobian(const VectorXd& x) const {
  const MatrixXd Dw =
      model_.V.topRows(model_.o) + model_.W_nl.topRows(model_.o) * model_.w_spec.jacobian(x);
  return model_.norm.scale.head(model_.o).asDiagonal() * Dw;
}

VectorXd KoopmanRom::encode_window(const std::vector<Observation>& window) const {
  const int L = model_.delays + 1;
  if (static_cast<int>(window.size()) < L)
    throw std::invalid_argument("KoopmanRom: window shorter than the delay count");
  VectorXd x(L * model_.o);
  for (int lag = 0; lag < L; ++lag) x.segment(lag * model_.o, model_.o) = window[lag].y;
  return koopman_lift(model_, model_.norm.apply(x));
}

VectorXd KoopmanRom::step(const VectorXd& x, const std::vector<VectorXd>& u_lags,
                          double dt) const {
  if (std::abs(dt - model_.dt) > 1e-12)
    throw std::invalid_argument("KoopmanRom: discrete model rate differs from requested dt");
  return model_.A_d * x + model_.B_d * u_lags.front();
}

void KoopmanRom::step_jacobians(const VectorXd&, const std::vector<VectorXd>&, double dt,
                                MatrixXd& A, std::vector<MatrixXd>& B_lags) const {
  if (std::abs(dt - model_.dt) > 1e-12)
    throw std::invalid_argument("KoopmanRom: discrete model rate differs from requested dt");
  A = model_.A_d;
  B_lags.assign(1, model_.B_d);
}

VectorXd KoopmanRom::observation(const VectorXd& x) const {
  const long stacked = model_.norm.center.size();
  return model_.norm.invert(x.head(stacked)).head(model_.o);
}

MatrixXd KoopmanRom::observation_jacobian(const VectorXd& x) const {
  MatrixXd J = MatrixXd::Zero(model_.o, x.size());
  J.leftCols(model_.o) = model_.norm.scale.head(model_.o).asDiagonal();
  return J;
}

// ---------------------------------------------------------------------------
// MPC
// ---------------------------------------------------------------------------

MpcConfig MpcConfig::defaults(int o, int m) {
  MpcConfig cfg;
  cfg.q_weights = VectorXd::Zero(3);
  cfg.q_weights << 7.0, 7.0, 0.0;
  cfg.qf_weights = VectorXd::Zero(3);
  cfg.qf_weights << 20.0, 20.0, 0.0;
  cfg.rdelta_weights = VectorXd::Constant(m, 0.16);
  cfg.u_min = VectorXd::Constant(m, -1.0);
  cfg.u_max = VectorXd::Constant(m, 1.0);
  cfg.perf_rows = {o - 3, o - 2, o - 1};
  return cfg;
}

int MpcConfig::steps_per_command() const {
  return static_cast<int>(std::round(actuation_period / dt));
}

int MpcConfig::n_commands() const {
  const int spc = steps_per_command();
  return (horizon + spc - 1) / spc;
}

void MpcConfig::validate() const {
  if (horizon < 1) throw std::invalid_argument("MpcConfig: horizon must be >= 1");
  const double ratio = actuation_period / dt;
  if (std::abs(ratio - std::round(ratio)) > 1e-9 || ratio < 1.0)
    throw std::invalid_argument("MpcConfig: actuation period must be an integer multiple of dt");
  if (q_weights.minCoeff() < 0.0 || qf_weights.minCoeff() < 0.0 ||
      rdelta_weights.minCoeff() < 0.0)
    throw std::invalid_argument("MpcConfig: weights must be non-negative");
  if (u_min.size() != u_max.size() || (u_max - u_min).minCoeff() <= 0.0)
    throw std::invalid_argument("MpcConfig: invalid input box");
  if (perf_rows.empty()) throw std::invalid_argument("MpcConfig: performance selector empty");
}

namespace {

constexpr double kMmPerM = 1000.0;

int command_index(const MpcConfig& config, int step) {
  return std::min(step / config.steps_per_command(), config.n_commands() - 1);
}

VectorXd select_perf(const MpcConfig& config, const VectorXd& y) {
  VectorXd out(config.perf_rows.size());
  for (std::size_t i = 0; i < config.perf_rows.size(); ++i) out(i) = y(config.perf_rows[i]);
  return out;
}

MatrixXd select_perf_rows(const MpcConfig& config, const MatrixXd& J) {
  MatrixXd out(config.perf_rows.size(), J.cols());
  for (std::size_t i = 0; i < config.perf_rows.size(); ++i) out.row(i) = J.row(config.perf_rows[i]);
  return out;
}

std::vector<VectorXd> lag_buffer(const MpcConfig& config, const MatrixXd& commands,
                                 const VectorXd& u_prev, int step, int lags) {
  std::vector<VectorXd> buffer(lags);
  for (int j = 0; j < lags; ++j) {
    const int s = step - j;
    buffer[j] = s >= 0 ? commands.col(command_index(config, s)).eval() : u_prev;
  }
  return buffer;
}

}  // namespace

std::vector<AffineStepModel> linearize_reduced(const ReducedOrderModel& rom, const VectorXd& z0,
                                               const MatrixXd& commands, const MpcConfig& config,
                                               const VectorXd& u_prev) {
  std::vector<AffineStepModel> models(config.horizon);
  VectorXd z = z0;
  for (int k = 0; k < config.horizon; ++k) {
    const auto buffer = lag_buffer(config, commands, u_prev, k, rom.input_lags());
    AffineStepModel& mk = models[k];
    rom.step_jacobians(z, buffer, config.dt, mk.A, mk.B_lags);
    z = rom.step(z, buffer, config.dt);
    if (!z.allFinite()) throw DivergenceError(k + 1);
    mk.zbar = z;
    const VectorXd y = rom.observation(z);
    mk.ybar = select_perf(config, y) * kMmPerM;
    mk.C = select_perf_rows(config, rom.observation_jacobian(z)) * kMmPerM;
  }
  return models;
}

MpcSolution solve_tracking_qp(const std::vector<AffineStepModel>& models, const VectorXd& z0,
                              const MatrixXd& reference, const MpcConfig& config,
                              const VectorXd& u_prev, const MatrixXd& u_bar,
                              double trust_radius) {
  const int N = config.horizon;
  const int m = static_cast<int>(u_prev.size());
  const int n_c = config.n_commands();
  const int nv = m * n_c;
  const int p = static_cast<int>(config.perf_rows.size());
  const int n = static_cast<int>(models.front().A.rows());

  // Sensitivities of each predicted state to the command deltas.
  std::vector<MatrixXd> T(N);          // p×nv output sensitivities at steps 1..N
  std::vector<VectorXd> err(N);        // tracking errors at steps 1..N (mm)
  std::vector<MatrixXd> S_list(N + 1);
  MatrixXd S = MatrixXd::Zero(n, nv);
  S_list[0] = S;
  MatrixXd H = MatrixXd::Zero(nv, nv);
  VectorXd g = VectorXd::Zero(nv);
  double c0 = 0.0;

  for (int k = 0; k < N; ++k) {
    MatrixXd S_next = models[k].A * S;
    for (std::size_t j = 0; j < models[k].B_lags.size(); ++j) {
      const int s = k - static_cast<int>(j);
      if (s < 0) continue;  // history before the horizon is fixed
      S_next.middleCols(command_index(config, s) * m, m) += models[k].B_lags[j];
    }
    S = S_next;
    S_list[k + 1] = S;
    VectorXd q = config.q_weights;
    if (k + 1 == N) q += config.qf_weights;
    T[k] = models[k].C * S;
    err[k] = models[k].ybar - reference.col(k + 1);
    H.noalias() += 2.0 * T[k].transpose() * q.asDiagonal() * T[k];
    g.noalias() += 2.0 * T[k].transpose() * (q.asDiagonal() * err[k]);
    c0 += err[k].dot(q.asDiagonal() * err[k]);
  }

  // Input-change penalty on consecutive commands (coupled to u_prev).
  const VectorXd r = config.rdelta_weights;
  std::vector<VectorXd> dbar(n_c);
  for (int c = 0; c < n_c; ++c) {
    dbar[c] = u_bar.col(c) - (c == 0 ? u_prev : u_bar.col(c - 1));
    c0 += dbar[c].dot(r.asDiagonal() * dbar[c]);
    H.block(c * m, c * m, m, m) += 2.0 * MatrixXd(r.asDiagonal());
    g.segment(c * m, m) += 2.0 * (r.asDiagonal() * dbar[c]);
    if (c > 0) {
      H.block(c * m, (c - 1) * m, m, m) -= 2.0 * MatrixXd(r.asDiagonal());
      H.block((c - 1) * m, c * m, m, m) -= 2.0 * MatrixXd(r.asDiagonal());
      H.block((c - 1) * m, (c - 1) * m, m, m) += 2.0 * MatrixXd(r.asDiagonal());
      g.segment((c - 1) * m, m) -= 2.0 * (r.asDiagonal() * dbar[c]);
    }
  }

  // Soft output bounds, quadratic slack penalty.
  const double w_y = config.y_bounds_enabled
                         ? 1e3 * std::max(config.q_weights.maxCoeff(), config.qf_weights.maxCoeff())
                         : 0.0;
  auto penalty_value_grad = [&](const VectorXd& v, VectorXd* grad) {
    double val = 0.0;
    if (grad) grad->setZero();
    if (w_y <= 0.0) return val;
    for (int k = 0; k < N; ++k) {
      const VectorXd y = models[k].ybar + T[k] * v;
      VectorXd viol = VectorXd::Zero(p);
      for (int i = 0; i < p; ++i) {
        if (y(i) > config.y_max(i))
          viol(i) = y(i) - config.y_max(i);
        else if (y(i) < config.y_min(i))
          viol(i) = y(i) - config.y_min(i);
      }
      val += w_y * viol.squaredNorm();
      if (grad) grad->noalias() += 2.0 * w_y * (T[k].transpose() * viol);
    }
    return val;
  };

  // Box: command limits intersected with the trust region around u_bar.
  VectorXd lo(nv), hi(nv);
  for (int c = 0; c < n_c; ++c) {
    for (int i = 0; i < m; ++i) {
      double l = config.u_min(i) - u_bar(i, c);
      double h = config.u_max(i) - u_bar(i, c);
      if (trust_radius > 0.0) {
        l = std::max(l, -trust_radius);
        h = std::min(h, trust_radius);
      }
      lo(c * m + i) = std::min(l, 0.0);
      hi(c * m + i) = std::max(h, 0.0);
    }
  }
  auto project = [&](VectorXd v) { return v.cwiseMax(lo).cwiseMin(hi).eval(); };

  // Lipschitz constant of the gradient.
  double lip;
  {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(H, Eigen::EigenvaluesOnly);
    lip = std::max(es.eigenvalues().maxCoeff(), 1e-12);
    if (w_y > 0.0) {
      MatrixXd TtT = MatrixXd::Zero(nv, nv);
      for (int k = 0; k < N; ++k) TtT += T[k].transpose() * T[k];
      Eigen::SelfAdjointEigenSolver<MatrixXd> es2(TtT, Eigen::EigenvaluesOnly);
      lip += 2.0 * w_y * es2.eigenvalues().maxCoeff();
    }
  }
  const double step = 1.0 / lip;

  auto grad_at = [&](const VectorXd& v, VectorXd& pen_grad) {
    penalty_value_grad(v, &pen_grad);
    return (H * v + g + pen_grad).eval();
  };

  // FISTA with projection and gradient-based adaptive restart.
  VectorXd x = VectorXd::Zero(nv);
  VectorXd y_acc = x;
  double t = 1.0;
  double kkt = std::numeric_limits<double>::infinity();
  int it = 0;
  VectorXd pen_grad(nv);
  for (; it < config.qp_max_iters; ++it) {
    const VectorXd grad_y = grad_at(y_acc, pen_grad);
    const VectorXd x_new = project(y_acc - step * grad_y);
    if ((y_acc - x_new).dot(x_new - x) > 0.0) t = 1.0;  // restart
    const double t_new = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    y_acc = x_new + ((t - 1.0) / t_new) * (x_new - x);
    const double dx = (x_new - x).lpNorm<Eigen::Infinity>();
    x = x_new;
    t = t_new;
    if (dx < 0.1 * config.qp_tol || it % 10 == 9) {
      const VectorXd grad_x = grad_at(x, pen_grad);
      kkt = (x - project(x - step * grad_x)).lpNorm<Eigen::Infinity>();
      if (kkt <= config.qp_tol) {
        ++it;
        break;
      }
    }
  }

  MpcSolution sol;
  sol.u = u_bar;
  for (int c = 0; c < n_c; ++c) sol.u.col(c) += x.segment(c * m, m);
  sol.z.resize(n, N + 1);
  sol.z.col(0) = z0;
  for (int k = 1; k <= N; ++k) sol.z.col(k) = models[k - 1].zbar + S_list[k] * x;
  sol.cost = c0 + g.dot(x) + 0.5 * x.dot(H * x) + penalty_value_grad(x, nullptr);
  sol.kkt_residual = kkt;
  sol.qp_iterations = it;
  sol.status = kkt <= config.qp_tol ? MpcSolution::Status::optimal : MpcSolution::Status::max_iter;

  if (config.y_bounds_enabled) {
    double worst = 0.0;
    for (int k = 0; k < N; ++k) {
      const VectorXd y = models[k].ybar + T[k] * x;
      for (int i = 0; i < p; ++i)
        worst = std::max({worst, y(i) - config.y_max(i), config.y_min(i) - y(i)});
    }
    if (worst > config.y_slack_cap_mm) sol.status = MpcSolution::Status::infeasible;
  }
  return sol;
}

namespace {

// True nonlinear rollout cost of a command plan (mm-scaled), +inf on
// divergence.
double plan_cost(const ReducedOrderModel& rom, const VectorXd& z0, const MatrixXd& commands,
                 const MatrixXd& reference, const MpcConfig& config, const VectorXd& u_prev) {
  double cost = 0.0;
  VectorXd z = z0;
  const int N = config.horizon;
  for (int k = 0; k < N; ++k) {
    const auto buffer = lag_buffer(config, commands, u_prev, k, rom.input_lags());
    z = rom.step(z, buffer, config.dt);
    if (!z.allFinite() || z.norm() > 1e9) return std::numeric_limits<double>::infinity();
    const VectorXd y = select_perf(config, rom.observation(z)) * kMmPerM;
    VectorXd q = config.q_weights;
    if (k + 1 == N) q += config.qf_weights;
    const VectorXd e = y - reference.col(k + 1);
    cost += e.dot(q.asDiagonal() * e);
    if (config.y_bounds_enabled) {
      const double w_y =
          1e3 * std::max(config.q_weights.maxCoeff(), config.qf_weights.maxCoeff());
      for (long i = 0; i < y.size(); ++i) {
        const double viol = std::max({0.0, y(i) - config.y_max(i), config.y_min(i) - y(i)});
        cost += w_y * viol * viol;
      }
    }
  }
  for (int c = 0; c < config.n_commands(); ++c) {
    const VectorXd d = commands.col(c) - (c == 0 ? u_prev : commands.col(c - 1));
    cost += d.dot(config.rdelta_weights.asDiagonal() * d);
  }
  return cost;
}

}  // namespace

VectorXd mpc_step(const ReducedOrderModel& rom, const std::vector<Observation>& window,
                  const MatrixXd& reference, const MpcConfig& config, MpcState& state,
                  MpcStepInfo* info) {
  const auto t_start = std::chrono::steady_clock::now();
  config.validate();
  const int m = rom.input_dim();
  const int n_c = config.n_commands();

  if (state.u_applied.size() != m) state.u_applied = VectorXd::Zero(m);
  const VectorXd u_prev = state.u_applied;

  MpcStepInfo local;
  auto finish = [&](const VectorXd& u) {
    local.solve_ms = std::chrono::duration<double, std::milli>(
                         std::chrono::steady_clock::now() - t_start)
                         .count();
    if (info) *info = local;
    return u;
  };

  VectorXd z0;
  try {
    z0 = rom.encode_window(window);
  } catch (const std::exception&) {
    local.fallback = true;
    return finish(u_prev);
  }

  // Warm start: shift the previous plan by one actuation period.
  MatrixXd U(m, n_c);
  if (state.valid && state.u_warm.cols() == n_c) {
    U.leftCols(n_c - 1) = state.u_warm.rightCols(n_c - 1);
    U.col(n_c - 1) = state.u_warm.col(n_c - 1);
  } else {
    for (int c = 0; c < n_c; ++c) U.col(c) = u_prev;
  }
  for (int c = 0; c < n_c; ++c)
    U.col(c) = U.col(c).cwiseMax(config.u_min).cwiseMin(config.u_max);

  double radius = config.trust_region;
  double best_cost = plan_cost(rom, z0, U, reference, config, u_prev);
  if (!std::isfinite(best_cost)) {
    local.fallback = true;
    return finish(u_prev);
  }

  for (int iter = 0; iter < config.scp_iters; ++iter) {
    std::vector<AffineStepModel> models;
    try {
      models = linearize_reduced(rom, z0, U, config, u_prev);
    } catch (const DivergenceError&) {
      local.fallback = true;
      break;
    }
    const MpcSolution sol = solve_tracking_qp(models, z0, reference, config, u_prev, U, radius);
    const double cand_cost = plan_cost(rom, z0, sol.u, reference, config, u_prev);
    ++local.scp_iterations;
    local.qp_iterations += sol.qp_iterations;
    if (cand_cost <= best_cost + 1e-12) {
      U = sol.u;
      best_cost = cand_cost;
      radius = std::min(2.0 * radius, 4.0 * config.trust_region);
      local.kkt_residual = sol.kkt_residual;
    } else {
      radius *= 0.5;
    }
  }

  local.cost = best_cost;
  state.u_warm = U;
  state.u_applied = U.col(0);
  state.valid = true;
  return finish(U.col(0));
}

ClosedLoopResult closed_loop_run(const PlantConfig& plant, const ReducedOrderModel& rom,
                                 const MpcConfig& config,
                                 const std::function<VectorXd(double)>& y_ref,
                                 const ClosedLoopOptions& options) {
  config.validate();
  plant.validate();
  const int steps = static_cast<int>(std::round(options.duration_s / config.dt));
  const int spc = config.steps_per_command();
  const int p = static_cast<int>(config.perf_rows.size());
  const int N = config.horizon;

  std::mt19937_64 rng(options.noise_seed);
  PlantState state = equilibrium_state(plant);
  VectorXd u_cmd = VectorXd::Zero(plant.m_inputs);
  MpcState mpc_state;
  mpc_state.u_applied = u_cmd;

  ClosedLoopResult result;
  result.log.dt = config.dt;
  result.log.protocol = "closed-loop";
  result.y_ref.resize(p, steps);

  std::vector<Observation> window;
  {
    const Observation eq_obs = observe(state, u_cmd, plant, rng);
    window.assign(rom.window_len(), eq_obs);
  }

  double sum_sq = 0.0;
  long err_count = 0;
  double sum_solve = 0.0, max_solve = 0.0, max_kkt = 0.0, sum_scp = 0.0;
  long solves = 0;

  for (int k = 0; k < steps; ++k) {
    const double t = k * config.dt;
    Observation obs = observe(state, u_cmd, plant, rng);
    window.insert(window.begin(), obs);
    window.resize(rom.window_len());

    if (k % spc == 0) {
      MatrixXd reference(p, N + 1);
      for (int j = 0; j <= N; ++j) reference.col(j) = y_ref(t + j * config.dt) * kMmPerM;
      MpcStepInfo step_info;
      u_cmd = mpc_step(rom, window, reference, config, mpc_state, &step_info);
      sum_solve += step_info.solve_ms;
      max_solve = std::max(max_solve, step_info.solve_ms);
      max_kkt = std::max(max_kkt, step_info.kkt_residual);
      sum_scp += step_info.scp_iterations;
      result.solve_ms.push_back(step_info.solve_ms);
      ++solves;
    }

    obs.u_ref = u_cmd;
    result.log.samples.push_back(obs);
    const VectorXd ref_t = y_ref(t);
    result.y_ref.col(k) = ref_t;

    if (t >= options.transient_exclusion_s) {
      const VectorXd y_perf = select_perf(config, obs.y);
      for (int i = 0; i < p; ++i) {
        if (config.q_weights(i) > 0.0) {
          const double e = (y_perf(i) - ref_t(i)) * kMmPerM;
          sum_sq += e * e;
          ++err_count;
        }
      }
    }

    try {
      state = advance(state, u_cmd, config.dt, plant);
    } catch (const std::runtime_error&) {
      result.diverged = true;
      break;
    }
    if (state.q.norm() > 100.0 * plant.rest_length) {
      result.diverged = true;
      break;
    }
  }

  result.rmse_mm = err_count > 0 ? std::sqrt(sum_sq / static_cast<double>(err_count)) : 0.0;
  result.mean_solve_ms = solves > 0 ? sum_solve / static_cast<double>(solves) : 0.0;
  result.max_solve_ms = max_solve;
  result.max_kkt = max_kkt;
  result.mean_scp_iters = solves > 0 ? sum_scp / static_cast<double>(solves) : 0.0;
  return result;
}

}  // namespace cassm
