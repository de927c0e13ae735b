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

#include "cassm/baselines.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <stdexcept>

#include "cassm/linalg.hpp"
#include "cassm/manifold.hpp"

namespace cassm {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

struct ObsSeries {
  EmbeddedSeries emb;
  Eigen::MatrixXd uref;  ///< commanded inputs aligned with emb columns
};

std::vector<ObsSeries> prepare_observation_series(const std::vector<Trajectory>& trajs, int L,
                                                  bool smooth, double q_noise, double r_noise,
                                                  bool release_only) {
  std::vector<ObsSeries> out;
  for (const Trajectory& traj : trajs) {
    const Trajectory smoothed = smooth ? kalman_rts_smooth(traj, q_noise, r_noise) : traj;
    const Trajectory sliced = release_only ? release_phase(smoothed) : smoothed;
    if (static_cast<int>(sliced.samples.size()) < L + 9) continue;
    ObsSeries s;
    s.emb = delay_embed_observations(sliced, L);
    const int m = sliced.m();
    const long cols = s.emb.X.cols();
    s.uref.resize(m, cols);
    for (long k = 0; k < cols; ++k) s.uref.col(k) = sliced.samples[k + L - 1].u_ref;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

OssmModel fit_ossm(const std::vector<Trajectory>& decays,
                   const std::vector<Trajectory>& controlled, const OssmOptions& options) {
  if (decays.empty()) throw std::invalid_argument("fit_ossm: no decay trajectories");
  if (controlled.empty())
    throw std::invalid_argument(
        "fit_ossm: the affine control map requires controlled calibration trajectories");

  const double dt = decays.front().dt;
  auto series = prepare_observation_series(decays, options.L, options.smooth, options.q_noise,
                                           options.r_noise, /*release_only=*/true);
  if (series.empty()) throw std::invalid_argument("fit_ossm: all decay trajectories too short");

  OssmModel model;
  model.o = series.front().emb.o;
  model.m = static_cast<int>(decays.front().samples.front().u_ref.size());
  model.L = options.L;
  model.n = options.n;
  model.dt_train = dt;
  {
    std::vector<EmbeddedSeries> embs;
    for (const ObsSeries& s : series) embs.push_back(s.emb);
    model.norm = fit_normalization(embs, options.tail_s, dt);
  }

  std::vector<MatrixXd> Xn;
  long total = 0;
  for (const ObsSeries& s : series) {
    Xn.push_back(model.norm.apply_batch(s.emb.X));
    total += s.emb.X.cols();
  }
  MatrixXd pooled(options.L * model.o, total);
  long at = 0;
  for (const MatrixXd& X : Xn) {
    pooled.middleCols(at, X.cols()) = X;
    at += X.cols();
  }

  model.V = fit_subspace(pooled, options.n).V;
  model.w_spec = FeatureMapSpec::polynomial(options.n, 2, options.degree);
  model.r_spec = FeatureMapSpec::polynomial(options.n, 2, options.degree);
  model.W_nl = fit_parameterization(pooled, model.V, model.w_spec, options.ridge);

  std::vector<MatrixXd> Z_parts, Zdot_parts;
  for (const MatrixXd& X : Xn) {
    const MatrixXd Z = model.V.transpose() * X;
    const MatrixXd Zdot = estimate_derivatives(Z, dt);
    const long keep = Z.cols() - 2 * options.trim;
    Z_parts.push_back(Z.middleCols(options.trim, keep));
    Zdot_parts.push_back(Zdot.middleCols(options.trim, keep));
  }
  long ztotal = 0;
  for (const MatrixXd& Z : Z_parts) ztotal += Z.cols();
  MatrixXd Z(options.n, ztotal), Zdot(options.n, ztotal);
  at = 0;
  for (std::size_t i = 0; i < Z_parts.size(); ++i) {
    Z.middleCols(at, Z_parts[i].cols()) = Z_parts[i];
    Zdot.middleCols(at, Zdot_parts[i].cols()) = Zdot_parts[i];
    at += Z_parts[i].cols();
  }
  ReducedDynamicsFit dyn = fit_reduced_dynamics(Z, Zdot, model.r_spec, options.ridge);
  model.R0 = dyn.R0;
  model.R_nl = dyn.theta;
  model.train_max_state = Z.colwise().norm().maxCoeff();

  // Separate calibration: regress the dynamics residual of controlled data
  // on the commanded input.
  auto cal = prepare_observation_series(controlled, options.L, options.smooth, options.q_noise,
                                        options.r_noise, /*release_only=*/false);
  if (cal.empty()) throw std::invalid_argument("fit_ossm: controlled trajectories too short");
  std::vector<MatrixXd> res_parts, u_parts;
  for (const ObsSeries& s : cal) {
    const MatrixXd Xc = model.norm.apply_batch(s.emb.X);
    const MatrixXd Zc = model.V.transpose() * Xc;
    const MatrixXd Zcdot = estimate_derivatives(Zc, dt);
    const long keep = Zc.cols() - 2 * options.trim;
    const MatrixXd residual =
        Zcdot - model.R0 * Zc - model.R_nl * model.r_spec.eval_centered_batch(Zc);
    res_parts.push_back(residual.middleCols(options.trim, keep));
    u_parts.push_back(s.uref.middleCols(options.trim, keep));
  }
  long ctotal = 0;
  for (const MatrixXd& R : res_parts) ctotal += R.cols();
  MatrixXd Res(options.n, ctotal), U(model.m, ctotal);
  at = 0;
  for (std::size_t i = 0; i < res_parts.size(); ++i) {
    Res.middleCols(at, res_parts[i].cols()) = res_parts[i];
    U.middleCols(at, u_parts[i].cols()) = u_parts[i];
    at += res_parts[i].cols();
  }
  model.B_r = ridge_fit(U, Res, options.ridge).coeffs;
  return model;
}

KoopmanModel fit_koopman(const std::vector<Trajectory>& trajectories,
                         const KoopmanOptions& options) {
  if (trajectories.empty()) throw std::invalid_argument("fit_koopman: no trajectories");
  const double dt = trajectories.front().dt;
  const int L = options.delays + 1;

  auto series = prepare_observation_series(trajectories, L, options.smooth, options.q_noise,
                                           options.r_noise, /*release_only=*/false);
  if (series.empty()) throw std::invalid_argument("fit_koopman: all trajectories too short");

  KoopmanModel model;
  model.o = series.front().emb.o;
  model.m = static_cast<int>(trajectories.front().samples.front().u_ref.size());
  model.delays = options.delays;
  model.degree = options.degree;
  model.dt = dt;
  {
    std::vector<EmbeddedSeries> embs;
    for (const ObsSeries& s : series) embs.push_back(s.emb);
    model.norm = fit_normalization(embs, options.tail_s, dt);
  }

  const int stacked = L * model.o;
  long n_poly = 0;
  if (options.degree >= 2) n_poly = poly_feature_count(stacked, 2, options.degree);
  model.lifted_dim = stacked + static_cast<int>(n_poly);
  if (model.lifted_dim > 5000)
    throw std::invalid_argument("fit_koopman: lifted dimension exceeds 5000");

  long total_pairs = 0;
  for (const ObsSeries& s : series) total_pairs += s.emb.X.cols() - 1;
  MatrixXd G(model.lifted_dim + model.m, total_pairs);
  MatrixXd Y(model.lifted_dim, total_pairs);
  long at = 0;
  for (const ObsSeries& s : series) {
    const MatrixXd Xn = model.norm.apply_batch(s.emb.X);
    for (long k = 0; k + 1 < Xn.cols(); ++k) {
      G.col(at).head(model.lifted_dim) = koopman_lift(model, Xn.col(k));
      G.col(at).tail(model.m) = s.uref.col(k);
      Y.col(at) = koopman_lift(model, Xn.col(k + 1));
      ++at;
    }
  }

  const MatrixXd AB = ridge_fit(G, Y, options.ridge).coeffs;
  model.A_d = AB.leftCols(model.lifted_dim);
  model.B_d = AB.rightCols(model.m);

  Eigen::EigenSolver<MatrixXd> es(model.A_d, false);
  model.spectral_radius = es.eigenvalues().cwiseAbs().maxCoeff();

  double max_psi = 0.0;
  for (long k = 0; k < G.cols(); ++k)
    max_psi = std::max(max_psi, G.col(k).head(model.lifted_dim).norm());
  model.train_max_state = max_psi;
  return model;
}

VectorXd koopman_lift(const KoopmanModel& model, const VectorXd& stacked_norm) {
  if (model.degree < 2) return stacked_norm;
  VectorXd psi(model.lifted_dim);
  psi.head(stacked_norm.size()) = stacked_norm;
  psi.tail(model.lifted_dim - stacked_norm.size()) =
      poly_features(stacked_norm, 2, model.degree);
  return psi;
}

BaselinePrediction predict_ossm(const OssmModel& model, const VectorXd& y_embedded,
                                const std::vector<VectorXd>& uref_sequence, double dt, int steps) {
  if (steps > 0 && static_cast<int>(uref_sequence.size()) < steps)
    throw std::invalid_argument("predict_ossm: need one commanded input per step");
  BaselinePrediction out;
  out.y.resize(model.o, steps + 1);
  VectorXd z = model.V.transpose() * model.norm.apply(y_embedded);
  auto decode_y = [&](const VectorXd& zz) {
    const VectorXd xn = model.V * zz + model.W_nl * model.w_spec.eval_centered(zz);
    return model.norm.invert(xn).head(model.o).eval();
  };
  out.y.col(0) = decode_y(z);
  const double guard = 1e3 * std::max(model.train_max_state, 1.0);
  for (int k = 0; k < steps; ++k) {
    const VectorXd& u = uref_sequence[k];
    auto f = [&](const VectorXd& zz) {
      return (model.R0 * zz + model.R_nl * model.r_spec.eval_centered(zz) + model.B_r * u).eval();
    };
    const VectorXd k1 = f(z);
    const VectorXd k2 = f(z + 0.5 * dt * k1);
    const VectorXd k3 = f(z + 0.5 * dt * k2);
    const VectorXd k4 = f(z + dt * k3);
    z += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!z.allFinite() || z.norm() > guard) {
      out.diverged = true;
      out.diverged_step = k + 1;
      out.y.conservativeResize(model.o, k + 1);
      return out;
    }
    out.y.col(k + 1) = decode_y(z);
  }
  return out;
}

BaselinePrediction predict_koopman(const KoopmanModel& model, const VectorXd& y_stacked,
                                   const std::vector<VectorXd>& uref_sequence, int steps) {
  if (steps > 0 && static_cast<int>(uref_sequence.size()) < steps)
    throw std::invalid_argument("predict_koopman: need one commanded input per step");
  BaselinePrediction out;
  out.y.resize(model.o, steps + 1);
  VectorXd psi = koopman_lift(model, model.norm.apply(y_stacked));
  const long stacked = model.norm.center.size();
  auto decode_y = [&](const VectorXd& p) {
    return model.norm.invert(p.head(stacked)).head(model.o).eval();
  };
  out.y.col(0) = decode_y(psi);
  const double guard = 1e3 * std::max(model.train_max_state, 1.0);
  for (int k = 0; k < steps; ++k) {
    psi = model.A_d * psi + model.B_d * uref_sequence[k];
    if (!psi.allFinite() || psi.norm() > guard) {
      out.diverged = true;
      out.diverged_step = k + 1;
      out.y.conservativeResize(model.o, k + 1);
      return out;
    }
    out.y.col(k + 1) = decode_y(psi);
  }
  return out;
}

}  // namespace cassm
