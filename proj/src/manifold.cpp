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

#include "cassm/manifold.hpp"

#include <Eigen/Eigenvalues>
#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numeric>
#include <sstream>

#include "cassm/linalg.hpp"

namespace cassm {

using Eigen::MatrixXd;
using Eigen::VectorXcd;
using Eigen::VectorXd;

SubspaceFit fit_subspace(const MatrixXd& X_centered, int n) {
  const int dim = static_cast<int>(X_centered.rows());
  if (n < 1 || n > dim)
    throw std::invalid_argument("fit_subspace: n must be in [1, embedded dimension]");
  const MatrixXd cov = X_centered * X_centered.transpose();
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(cov);
  if (es.info() != Eigen::Success) throw std::runtime_error("fit_subspace: eigensolver failed");

  // Eigenvalues come out ascending; flip to descending.
  VectorXd evals = es.eigenvalues().reverse();
  evals = evals.cwiseMax(0.0);
  const double total = evals.sum();

  SubspaceFit fit;
  fit.singular_values = evals.cwiseSqrt();
  if (fit.singular_values(n - 1) <= 1e-6 * fit.singular_values(0)) {
    std::ostringstream os;
    os << "fit_subspace: requested n = " << n
       << " exceeds the numerical rank; singular values:";
    for (int i = 0; i < dim; ++i) os << " " << fit.singular_values(i);
    throw std::invalid_argument(os.str());
  }
  fit.V.resize(dim, n);
  for (int i = 0; i < n; ++i) fit.V.col(i) = es.eigenvectors().col(dim - 1 - i);
  fit.explained_variance = evals / (total > 0.0 ? total : 1.0);
  return fit;
}

MatrixXd fit_parameterization(const MatrixXd& X_centered, const MatrixXd& V,
                              const FeatureMapSpec& spec, double ridge, double* condition) {
  const MatrixXd Z = V.transpose() * X_centered;
  const MatrixXd residual = X_centered - V * Z;
  const MatrixXd Phi = spec.eval_centered_batch(Z);
  RidgeFit fit = ridge_fit(Phi, residual, ridge);
  if (condition) *condition = fit.condition;
  MatrixXd W = fit.coeffs;
  W -= V * (V.transpose() * W);  // enforce VᵀW_nl = 0 exactly
  return W;
}

ReducedDynamicsFit fit_reduced_dynamics(const MatrixXd& Z, const MatrixXd& Zdot,
                                        const FeatureMapSpec& spec, double ridge) {
  const int n = static_cast<int>(Z.rows());
  const MatrixXd Phi = spec.eval_centered_batch(Z);
  MatrixXd G(n + Phi.rows(), Z.cols());
  G.topRows(n) = Z;
  G.bottomRows(Phi.rows()) = Phi;
  RidgeFit fit = ridge_fit(G, Zdot, ridge);

  ReducedDynamicsFit out;
  out.R0 = fit.coeffs.leftCols(n);
  out.theta = fit.coeffs.rightCols(Phi.rows());
  out.J0 = out.R0 + out.theta * spec.jacobian(VectorXd::Zero(n));
  out.condition = fit.condition;
  Eigen::EigenSolver<MatrixXd> es(out.J0, false);
  out.j0_eigs = es.eigenvalues();
  out.stable = out.j0_eigs.real().maxCoeff() < 0.0;
  return out;
}

MatrixXd identify_lambda(const MatrixXd& V, const MatrixXd& J0, const ModelDims& dims,
                         bool all_lags) {
  const int block = dims.o + dims.m;
  const int lags = all_lags ? dims.L : 1;
  MatrixXd Vu(lags * dims.m, V.cols());
  for (int k = 0; k < lags; ++k) Vu.middleRows(k * dims.m, dims.m) = V.middleRows(k * block + dims.o, dims.m);

  Eigen::JacobiSVD<MatrixXd> svd(Vu);
  const VectorXd& s = svd.singularValues();
  const int rank = (s.array() > 1e-10 * s(0)).count();
  if (rank < dims.m) {
    std::ostringstream os;
    os << "identify_lambda: actuator rows of V are rank deficient (rank " << rank << " < m = "
       << dims.m << "); increase the reduced dimension n or enrich the excitation";
    throw std::runtime_error(os.str());
  }
  const MatrixXd lhs = Vu * J0;  // (lags·m)×n
  if (!all_lags) return lhs * pinv(Vu);
  // Stacked least squares over all lag blocks: Λ·Vu_k = Vu_k·J0 for each k.
  MatrixXd num = MatrixXd::Zero(dims.m, dims.m);
  MatrixXd den = MatrixXd::Zero(dims.m, dims.m);
  for (int k = 0; k < lags; ++k) {
    const MatrixXd Vk = Vu.middleRows(k * dims.m, dims.m);
    num += lhs.middleRows(k * dims.m, dims.m) * Vk.transpose();
    den += Vk * Vk.transpose();
  }
  return num * pinv(den);
}

VectorXd encode(const ManifoldModel& model, const VectorXd& x_embedded) {
  return model.V.transpose() * model.norm.apply(x_embedded);
}

VectorXd decode(const ManifoldModel& model, const VectorXd& z) {
  return model.norm.invert(model.V * z + model.W_nl * model.w_spec.eval_centered(z));
}

VectorXd decode_observation(const ManifoldModel& model, const VectorXd& z) {
  return decode(model, z).head(model.dims.o);
}

MatrixXd decode_observation_jacobian(const ManifoldModel& model, const VectorXd& z) {
  const MatrixXd Dw =
      model.V.topRows(model.dims.o) + model.W_nl.topRows(model.dims.o) * model.w_spec.jacobian(z);
  return model.norm.scale.head(model.dims.o).asDiagonal() * Dw;
}

MatrixXd control_reference_gain(const ManifoldModel& model, int lag) {
  const int block = model.dims.o + model.dims.m;
  const MatrixXd Vu = model.V.middleRows(lag * block + model.dims.o, model.dims.m);
  return -(Vu.transpose() * model.Lambda) / model.u_scale();
}

MatrixXd control_reference_gain_total(const ManifoldModel& model) {
  MatrixXd total = MatrixXd::Zero(model.dims.n, model.dims.m);
  for (int lag = 0; lag < model.dims.L; ++lag) total += control_reference_gain(model, lag);
  return total;
}

VectorXd control_reference(const ManifoldModel& model, const std::vector<VectorXd>& uref_history,
                           RefMode mode) {
  if (mode == RefMode::exact) {
    if (static_cast<int>(uref_history.size()) < model.dims.L)
      throw std::invalid_argument(
          "control_reference: exact mode needs the L most recent commanded inputs");
    VectorXd r = VectorXd::Zero(model.dims.n);
    for (int lag = 0; lag < model.dims.L; ++lag)
      r += control_reference_gain(model, lag) * uref_history[lag];
    return r;
  }
  if (uref_history.empty())
    throw std::invalid_argument("control_reference: no commanded input provided");
  return control_reference_gain_total(model) * uref_history.front();
}

VectorXd reduced_derivative(const ManifoldModel& model, const VectorXd& z,
                            const std::vector<VectorXd>& uref_history) {
  return model.R0 * z + model.theta_r * model.r_spec.eval_centered(z) +
         control_reference(model, uref_history, model.ref_mode);
}

MatrixXd reduced_jacobian(const ManifoldModel& model, const VectorXd& z) {
  return model.R0 + model.theta_r * model.r_spec.jacobian(z);
}

PredictResult predict_open_loop(const ManifoldModel& model, const VectorXd& x0_embedded,
                                const std::vector<VectorXd>& uref_sequence, double dt, int steps,
                                const std::vector<VectorXd>& uref_prehistory) {
  if (steps > 0 && static_cast<int>(uref_sequence.size()) < steps)
    throw std::invalid_argument("predict_open_loop: need one commanded input per step");

  PredictResult out;
  out.z.resize(model.dims.n, steps + 1);
  out.y.resize(model.dims.o, steps + 1);
  VectorXd z = encode(model, x0_embedded);
  out.z.col(0) = z;
  out.y.col(0) = decode_observation(model, z);

  for (int k = 0; k < steps; ++k) {
    // Command buffer for this step, newest first; history before the start
    // comes from uref_prehistory, else repeats the first command.
    std::vector<VectorXd> buffer(model.dims.L);
    for (int lag = 0; lag < model.dims.L; ++lag) {
      const int idx = k - lag;
      if (idx >= 0)
        buffer[lag] = uref_sequence[idx];
      else if (static_cast<int>(uref_prehistory.size()) >= -idx)
        buffer[lag] = uref_prehistory[-idx - 1];
      else
        buffer[lag] = uref_sequence[0];
    }
    auto f = [&](const VectorXd& zz) { return reduced_derivative(model, zz, buffer); };
    const VectorXd k1 = f(z);
    const VectorXd k2 = f(z + 0.5 * dt * k1);
    const VectorXd k3 = f(z + 0.5 * dt * k2);
    const VectorXd k4 = f(z + dt * k3);
    z += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!z.allFinite() || z.norm() > 1e6) throw DivergenceError(k + 1);
    out.z.col(k + 1) = z;
    out.y.col(k + 1) = decode_observation(model, z);
  }
  return out;
}

double invariance_residual(const MatrixXd& V_basis, const MatrixXd& J0,
                           const MatrixXd& A_ambient) {
  if (A_ambient.cols() != V_basis.rows())
    throw std::invalid_argument("invariance_residual: generator and basis dimensions disagree");
  const long rows = A_ambient.rows();
  if (rows > V_basis.rows())
    throw std::invalid_argument("invariance_residual: generator has more rows than the basis");
  const MatrixXd lhs = (V_basis * J0).topRows(rows);
  const MatrixXd rhs = A_ambient * V_basis;
  return (lhs - rhs).norm() / rhs.norm();
}

MatrixXd fit_ambient_generator(const std::vector<MatrixXd>& X_series,
                               const std::vector<MatrixXd>& Xdot_series, int lag0_rows,
                               double ridge, double norm_quantile) {
  if (X_series.empty() || X_series.size() != Xdot_series.size())
    throw std::invalid_argument("fit_ambient_generator: mismatched series");
  long total = 0;
  for (const MatrixXd& X : X_series) total += X.cols();
  const long dim = X_series.front().rows();
  MatrixXd X(dim, total), Y(lag0_rows, total);
  long at = 0;
  for (std::size_t i = 0; i < X_series.size(); ++i) {
    X.middleCols(at, X_series[i].cols()) = X_series[i];
    Y.middleCols(at, X_series[i].cols()) = Xdot_series[i].topRows(lag0_rows);
    at += X_series[i].cols();
  }
  if (norm_quantile < 1.0) {
    std::vector<double> norms(total);
    for (long k = 0; k < total; ++k) norms[k] = X.col(k).norm();
    std::vector<double> sorted = norms;
    std::sort(sorted.begin(), sorted.end());
    const double cutoff = sorted[static_cast<std::size_t>(norm_quantile * (total - 1))];
    long kept = 0;
    for (long k = 0; k < total; ++k) {
      if (norms[k] <= cutoff) {
        X.col(kept) = X.col(k);
        Y.col(kept) = Y.col(k);
        ++kept;
      }
    }
    X.conservativeResize(dim, kept);
    Y.conservativeResize(lag0_rows, kept);
  }
  return ridge_fit(X, Y, ridge).coeffs;
}

MatrixXd embedded_slow_generator(const PlantLinearization& lin, const PlantConfig& cfg,
                                 const Normalization& norm, int L, double dt, int n_slow) {
  const MatrixXd A_aug = lin.augmented();
  const int dim = static_cast<int>(A_aug.rows());
  const int nf = cfg.n_mech();
  const int m = cfg.m_inputs;
  const int o = cfg.n_obs();

  const MatrixXd basis = slow_mode_basis(A_aug, n_slow);
  const MatrixXd lam = basis.transpose() * A_aug * basis;  // restricted generator

  // Marker + actuator selection of the full augmented state.
  MatrixXd select = MatrixXd::Zero(o + m, dim);
  for (std::size_t k = 0; k < cfg.observed_nodes.size(); ++k)
    for (int c = 0; c < 3; ++c)
      select(3 * static_cast<int>(k) + c, 3 * (cfg.observed_nodes[k] - 1) + c) = 1.0;
  for (int i = 0; i < m; ++i) select(o + i, nf + i) = 1.0;

  MatrixXd psi(L * (o + m), n_slow);
  for (int lag = 0; lag < L; ++lag)
    psi.middleRows(lag * (o + m), o + m) = select * basis * (-lag * dt * lam).exp();
  const MatrixXd psi_n = norm.scale.cwiseInverse().asDiagonal() * psi;
  return psi_n * lam * pinv(psi_n);
}

std::string to_string(SpectralReport::Overlap overlap) {
  switch (overlap) {
    case SpectralReport::Overlap::separated_fast: return "separated-fast";
    case SpectralReport::Overlap::actuator_slower: return "actuator-slower";
    default: return "overlapping";
  }
}

SpectralReport::Overlap classify_spectra(const VectorXcd& actuator_eigs,
                                         const VectorXcd& system_eigs) {
  const double act_min_mag = actuator_eigs.real().cwiseAbs().minCoeff();
  const double sys_max_mag = system_eigs.real().cwiseAbs().maxCoeff();
  if (act_min_mag > 3.0 * sys_max_mag) return SpectralReport::Overlap::separated_fast;
  const double act_slowest = actuator_eigs.real().maxCoeff();
  const double sys_slowest = system_eigs.real().maxCoeff();
  if (act_slowest > sys_slowest) return SpectralReport::Overlap::actuator_slower;
  return SpectralReport::Overlap::overlapping;
}

SpectralReport spectral_diagnostic(const ManifoldModel& model,
                                   const PlantLinearization* plant_lin) {
  SpectralReport report;
  Eigen::EigenSolver<MatrixXd> es_j(model.J0, false);
  report.reduced_eigs = es_j.eigenvalues();
  Eigen::EigenSolver<MatrixXd> es_l(model.Lambda, false);
  report.actuator_eigs = es_l.eigenvalues();

  // Strip the m reduced eigenvalues nearest to the actuator spectrum; the
  // remainder are the retained system modes.
  std::vector<bool> taken(report.reduced_eigs.size(), false);
  for (long a = 0; a < report.actuator_eigs.size(); ++a) {
    long best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (long i = 0; i < report.reduced_eigs.size(); ++i) {
      if (taken[i]) continue;
      const double d = std::abs(report.reduced_eigs(i) - report.actuator_eigs(a));
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    if (best >= 0) taken[best] = true;
  }
  std::vector<std::complex<double>> sys;
  for (long i = 0; i < report.reduced_eigs.size(); ++i)
    if (!taken[i]) sys.push_back(report.reduced_eigs(i));
  report.system_eigs = Eigen::Map<VectorXcd>(sys.data(), static_cast<long>(sys.size()));

  if (plant_lin) {
    Eigen::EigenSolver<MatrixXd> es_p(plant_lin->A, false);
    report.plant_eigs = es_p.eigenvalues();
  }
  if (report.system_eigs.size() > 0)
    report.overlap = classify_spectra(report.actuator_eigs, report.system_eigs);
  return report;
}

ManifoldModel fit_cassm(const std::vector<Trajectory>& decays, const CassmOptions& options,
                        FitReport* report) {
  if (decays.empty()) throw std::invalid_argument("fit_cassm: no decay trajectories");
  const double dt = decays.front().dt;

  // Smooth, cut the release phase, embed.
  std::vector<EmbeddedSeries> series;
  for (const Trajectory& traj : decays) {
    const Trajectory smoothed =
        options.smooth ? kalman_rts_smooth(traj, options.q_noise, options.r_noise) : traj;
    const Trajectory rel = release_phase(smoothed);
    if (static_cast<int>(rel.samples.size()) < options.L + 2 * options.trim + 5) continue;
    series.push_back(delay_embed(rel, options.L));
  }
  if (series.empty()) throw std::invalid_argument("fit_cassm: all trajectories too short");

  ManifoldModel model;
  model.dims.o = series.front().o;
  model.dims.m = series.front().m;
  model.dims.L = options.L;
  model.dims.n = options.n;
  model.dt_train = dt;
  model.ref_mode = options.ref_mode;
  if (options.n < model.dims.m)
    throw std::invalid_argument("fit_cassm: n must be at least m for actuator identification");

  model.norm = fit_normalization(series, options.tail_s, dt);

  std::vector<MatrixXd> Xn;
  long total = 0;
  for (const EmbeddedSeries& s : series) {
    Xn.push_back(model.norm.apply_batch(s.X));
    total += s.X.cols();
  }
  MatrixXd pooled(model.dims.embedded_dim(), total);
  long at = 0;
  for (const MatrixXd& X : Xn) {
    pooled.middleCols(at, X.cols()) = X;
    at += X.cols();
  }

  SubspaceFit subspace = fit_subspace(pooled, options.n);
  model.V = subspace.V;

  // The reduced coordinates inherit the PCA variance ladder, so an isotropic
  // kernel would barely see the trailing components. Whiten the feature
  // inputs by folding the per-component standard deviations into the frozen
  // frequencies; the deployed map stays a plain cosine feature map.
  VectorXd z_std = VectorXd::Ones(options.n);
  {
    const MatrixXd Zp = model.V.transpose() * pooled;
    for (int i = 0; i < options.n; ++i)
      z_std(i) = std::max(Zp.row(i).norm() / std::sqrt(static_cast<double>(Zp.cols())), 1e-9);
  }
  const auto make_spec = [&](std::uint64_t seed) {
    if (options.feature_kind == FeatureMapSpec::Kind::rff) {
      FeatureMapSpec spec =
          FeatureMapSpec::rff(options.n, options.rff_count, options.rff_lengthscale, seed);
      spec.omega = spec.omega * z_std.cwiseInverse().asDiagonal();
      return spec;
    }
    return FeatureMapSpec::polynomial(options.n, 2, options.poly_degree);
  };
  model.w_spec = make_spec(options.rff_seed);
  model.r_spec = make_spec(options.rff_seed + 1);

  double w_cond = 0.0;
  model.W_nl = fit_parameterization(pooled, model.V, model.w_spec, options.ridge, &w_cond);

  // Per-trajectory reduced coordinates and derivative estimates; the series
  // ends use lower-order differences, so trim them from the regression.
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
  model.theta_r = dyn.theta;
  model.J0 = dyn.J0;
  model.Lambda = identify_lambda(model.V, model.J0, model.dims, options.lambda_all_lags);

  if (report) {
    report->explained_variance = subspace.explained_variance;
    report->singular_values = subspace.singular_values;
    report->w_condition = w_cond;
    report->r_condition = dyn.condition;
    {
      const MatrixXd Phi = model.w_spec.eval_centered_batch(model.V.transpose() * pooled);
      const MatrixXd recon = model.V * (model.V.transpose() * pooled) + model.W_nl * Phi;
      report->w_residual = (pooled - recon).norm() / pooled.norm();
    }
    {
      const MatrixXd Phi = model.r_spec.eval_centered_batch(Z);
      report->r_residual = (Zdot - model.R0 * Z - model.theta_r * Phi).norm() / Zdot.norm();
    }
    Eigen::EigenSolver<MatrixXd> es_l(model.Lambda, false);
    report->lambda_eigs = es_l.eigenvalues();
    report->j0_eigs = dyn.j0_eigs;
    report->j0_stable = dyn.stable;
    if (!dyn.stable) {
      std::ostringstream os;
      os << "unstable reduced fit on decay data; eig(J0) real parts:";
      for (long i = 0; i < dyn.j0_eigs.size(); ++i) os << " " << dyn.j0_eigs(i).real();
      report->warnings.push_back(os.str());
    }
    if (w_cond > 1e12) report->warnings.push_back("parameterization regression ill-conditioned");
    if (dyn.condition > 1e12) report->warnings.push_back("dynamics regression ill-conditioned");
    std::vector<MatrixXd> X_trim, Xdot_trim;
    for (const MatrixXd& X : Xn) {
      const MatrixXd Xdot = estimate_derivatives(X, dt);
      const long keep = X.cols() - 2 * options.trim;
      X_trim.push_back(X.middleCols(options.trim, keep));
      Xdot_trim.push_back(Xdot.middleCols(options.trim, keep));
    }
    const MatrixXd G = fit_ambient_generator(X_trim, Xdot_trim, model.dims.o + model.dims.m,
                                             options.ridge, 0.5);
    report->invariance = invariance_residual(model.V, model.J0, G);
    report->spectral = spectral_diagnostic(model);
  }
  return model;
}

}  // namespace cassm
