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

#include "cassm/plant.hpp"

#include <Eigen/Eigenvalues>
#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace cassm {

using Eigen::MatrixXd;
using Eigen::Vector3d;
using Eigen::VectorXd;

void PlantConfig::validate() const {
  if (n_nodes < 2) throw std::invalid_argument("plant: n_nodes must be >= 2");
  if (mass <= 0.0) throw std::invalid_argument("plant: mass must be positive");
  if (k_lin <= 0.0) throw std::invalid_argument("plant: k_lin must be positive");
  if (c_damp_alpha < 0.0 || c_damp_beta < 0.0)
    throw std::invalid_argument("plant: damping coefficients must be non-negative");
  if (rest_length <= 0.0) throw std::invalid_argument("plant: rest_length must be positive");
  if (lambda_true.rows() != m_inputs || lambda_true.cols() != m_inputs)
    throw std::invalid_argument("plant: lambda_true must be m_inputs x m_inputs");
  if (input_gain_linear.rows() != n_q() || input_gain_linear.cols() != m_inputs)
    throw std::invalid_argument("plant: input_gain_linear must be 3*n_nodes x m_inputs");
  Eigen::EigenSolver<MatrixXd> es(lambda_true);
  if (es.eigenvalues().real().maxCoeff() >= 0.0)
    throw std::invalid_argument("plant: lambda_true must be Hurwitz");
  if (observed_nodes.empty())
    throw std::invalid_argument("plant: observed_nodes must not be empty");
  std::vector<int> sorted = observed_nodes;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (sorted[i] < 1 || sorted[i] > n_nodes)
      throw std::invalid_argument("plant: observed node index out of range");
    if (i > 0 && sorted[i] == sorted[i - 1])
      throw std::invalid_argument("plant: observed nodes must be distinct");
  }
}

PlantConfig default_plant() {
  PlantConfig cfg;
  cfg.lambda_true = -4.0 * MatrixXd::Identity(cfg.m_inputs, cfg.m_inputs);
  // Tendon-like force map: input 0 pushes along +x, input 1 along +y, with
  // weight ramping toward the tip.
  cfg.input_gain_linear = MatrixXd::Zero(cfg.n_q(), cfg.m_inputs);
  for (int i = 1; i <= cfg.n_nodes; ++i) {
    const double w = 0.22 * static_cast<double>(i) / cfg.n_nodes;
    cfg.input_gain_linear(3 * (i - 1) + 0, 0) = w;
    cfg.input_gain_linear(3 * (i - 1) + 1, 1) = w;
  }
  cfg.observed_nodes = {cfg.n_nodes / 3, 2 * cfg.n_nodes / 3, cfg.n_nodes};
  return cfg;
}

PlantConfig make_linear(PlantConfig cfg) {
  cfg.k_cub = 0.0;
  cfg.input_gain_state = 0.0;
  return cfg;
}

namespace {

// Extension of segment i (1-based, anchored chain): tension balances the
// weight of nodes i..n. Newton on k_lin·e + k_cub·e³ = T.
double segment_extension(const PlantConfig& cfg, int seg) {
  const double tension = cfg.mass * cfg.gravity * (cfg.n_nodes - seg + 1);
  double e = tension / cfg.k_lin;
  for (int it = 0; it < 60; ++it) {
    const double f = cfg.k_lin * e + cfg.k_cub * e * e * e - tension;
    const double df = cfg.k_lin + 3.0 * cfg.k_cub * e * e;
    const double step = f / df;
    e -= step;
    if (std::abs(step) < 1e-16) break;
  }
  return e;
}

}  // namespace

PlantState equilibrium_state(const PlantConfig& cfg) {
  PlantState s;
  s.q = VectorXd::Zero(cfg.n_q());
  s.qdot = VectorXd::Zero(cfg.n_q());
  s.u = VectorXd::Zero(cfg.m_inputs);
  const double l0 = cfg.rest_length / cfg.n_nodes;
  double z = 0.0;
  for (int i = 1; i <= cfg.n_nodes; ++i) {
    z -= l0 + segment_extension(cfg, i);
    s.q(3 * (i - 1) + 2) = z;
  }
  return s;
}

Eigen::VectorXd equilibrium_observation(const PlantConfig& cfg) {
  return observe(equilibrium_state(cfg), VectorXd::Zero(cfg.m_inputs), cfg).y;
}

PlantState plant_derivative(const PlantState& state, const VectorXd& u_ref,
                            const PlantConfig& cfg) {
  if (state.q.size() != cfg.n_q() || state.qdot.size() != cfg.n_q() ||
      state.u.size() != cfg.m_inputs || u_ref.size() != cfg.m_inputs)
    throw std::invalid_argument("plant_derivative: state/u_ref dimensions do not match config");

  const int n = cfg.n_nodes;
  const double l0 = cfg.rest_length / n;
  VectorXd force = VectorXd::Zero(cfg.n_q());

  // Segment elasticity plus Rayleigh damping proportional to the tangent
  // stiffness: k_lin along the segment axis, the geometric (tension/length)
  // stiffness transversally. Segment i runs from node i-1 to node i; node 0
  // is the fixed anchor at the origin.
  for (int i = 1; i <= n; ++i) {
    Vector3d p0 = Vector3d::Zero();
    Vector3d v0 = Vector3d::Zero();
    if (i > 1) {
      p0 = state.q.segment<3>(3 * (i - 2));
      v0 = state.qdot.segment<3>(3 * (i - 2));
    }
    const Vector3d p1 = state.q.segment<3>(3 * (i - 1));
    const Vector3d v1 = state.qdot.segment<3>(3 * (i - 1));
    const Vector3d d = p1 - p0;
    const double len = d.norm();
    const Vector3d dir = d / len;
    const double ext = len - l0;
    const double tension = cfg.k_lin * ext + cfg.k_cub * ext * ext * ext;
    const Vector3d dv = v1 - v0;
    const double dv_axial = dir.dot(dv);
    // Geometric damping saturates at twice the static load so the fast
    // damping roots stay inside the integrator's stability region.
    const double t_cap = 2.0 * cfg.mass * cfg.gravity * cfg.n_nodes;
    const double t_damp = std::clamp(tension, 0.0, t_cap);
    const Vector3d damp = cfg.c_damp_beta *
                          (cfg.k_lin * dv_axial * dir + t_damp / len * (dv - dv_axial * dir));
    const Vector3d f = -tension * dir - damp;
    force.segment<3>(3 * (i - 1)) += f;
    if (i > 1) force.segment<3>(3 * (i - 2)) -= f;
  }

  // Gravity and mass-proportional damping.
  for (int i = 0; i < n; ++i) {
    force(3 * i + 2) -= cfg.mass * cfg.gravity;
    force.segment<3>(3 * i) -= cfg.c_damp_alpha * cfg.mass * state.qdot.segment<3>(3 * i);
  }

  // Configuration-dependent input map G(q)·u; tip deflection is the tip's
  // horizontal offset from the anchor axis, normalized by the chain length.
  const double tip_defl =
      state.q.segment<2>(3 * (n - 1)).norm() / cfg.rest_length;
  const double gain = 1.0 + cfg.input_gain_state * std::tanh(tip_defl);
  force += gain * (cfg.input_gain_linear * state.u);

  PlantState dot;
  dot.q = state.qdot;
  dot.qdot = force / cfg.mass;
  dot.u = cfg.lambda_true * (state.u - u_ref);
  dot.t = 1.0;
  return dot;
}

PlantState rk4_step(const PlantState& state, const VectorXd& u_ref, double dt,
                    const PlantConfig& cfg) {
  if (dt <= 0.0) throw std::invalid_argument("rk4_step: dt must be positive");
  auto axpy = [](const PlantState& s, const PlantState& d, double h) {
    PlantState r;
    r.q = s.q + h * d.q;
    r.qdot = s.qdot + h * d.qdot;
    r.u = s.u + h * d.u;
    r.t = s.t + h;
    return r;
  };
  const PlantState k1 = plant_derivative(state, u_ref, cfg);
  const PlantState k2 = plant_derivative(axpy(state, k1, dt / 2), u_ref, cfg);
  const PlantState k3 = plant_derivative(axpy(state, k2, dt / 2), u_ref, cfg);
  const PlantState k4 = plant_derivative(axpy(state, k3, dt), u_ref, cfg);

  PlantState next;
  next.q = state.q + (dt / 6.0) * (k1.q + 2.0 * k2.q + 2.0 * k3.q + k4.q);
  next.qdot = state.qdot + (dt / 6.0) * (k1.qdot + 2.0 * k2.qdot + 2.0 * k3.qdot + k4.qdot);
  next.u = state.u + (dt / 6.0) * (k1.u + 2.0 * k2.u + 2.0 * k3.u + k4.u);
  next.t = state.t + dt;
  if (!next.q.allFinite() || !next.qdot.allFinite() || !next.u.allFinite()) {
    std::ostringstream os;
    os << "rk4_step: integration blow-up at t = " << state.t;
    throw std::runtime_error(os.str());
  }
  return next;
}

PlantState advance(const PlantState& state, const VectorXd& u_ref, double dt,
                   const PlantConfig& cfg) {
  const int sub = std::max(1, cfg.sim_substeps);
  PlantState s = state;
  for (int i = 0; i < sub; ++i) s = rk4_step(s, u_ref, dt / sub, cfg);
  return s;
}

Eigen::MatrixXd PlantLinearization::augmented() const {
  const int nf = static_cast<int>(A.rows());
  const int m = static_cast<int>(Lambda.rows());
  MatrixXd aug = MatrixXd::Zero(nf + m, nf + m);
  aug.topLeftCorner(nf, nf) = A;
  aug.topRightCorner(nf, m) = A_u;
  aug.bottomRightCorner(m, m) = Lambda;
  return aug;
}

PlantLinearization linearize_plant(const PlantConfig& cfg) {
  cfg.validate();
  const PlantState eq = equilibrium_state(cfg);
  const VectorXd uref0 = VectorXd::Zero(cfg.m_inputs);
  const int nm = cfg.n_mech();
  const int m = cfg.m_inputs;
  const double h = 1e-6;

  auto mech_dot = [&](const PlantState& s) {
    const PlantState d = plant_derivative(s, uref0, cfg);
    VectorXd out(nm);
    out << d.q, d.qdot;
    return out;
  };

  PlantLinearization lin;
  lin.A.resize(nm, nm);
  lin.A_u.resize(nm, m);
  lin.Lambda.resize(m, m);

  for (int j = 0; j < nm; ++j) {
    PlantState sp = eq, sm = eq;
    if (j < cfg.n_q()) {
      sp.q(j) += h;
      sm.q(j) -= h;
    } else {
      sp.qdot(j - cfg.n_q()) += h;
      sm.qdot(j - cfg.n_q()) -= h;
    }
    lin.A.col(j) = (mech_dot(sp) - mech_dot(sm)) / (2.0 * h);
  }
  for (int j = 0; j < m; ++j) {
    PlantState sp = eq, sm = eq;
    sp.u(j) += h;
    sm.u(j) -= h;
    lin.A_u.col(j) = (mech_dot(sp) - mech_dot(sm)) / (2.0 * h);
    lin.Lambda.col(j) =
        (plant_derivative(sp, uref0, cfg).u - plant_derivative(sm, uref0, cfg).u) / (2.0 * h);
  }

  Eigen::EigenSolver<MatrixXd> es(lin.A);
  const double max_re = es.eigenvalues().real().maxCoeff();
  if (max_re >= 0.0) {
    std::ostringstream os;
    os << "linearize_plant: mechanical linearization is not Hurwitz (max Re = " << max_re << ")";
    throw std::runtime_error(os.str());
  }
  return lin;
}

Observation observe(const PlantState& state, const VectorXd& u_ref, const PlantConfig& cfg) {
  Observation obs;
  obs.y.resize(cfg.n_obs());
  for (std::size_t k = 0; k < cfg.observed_nodes.size(); ++k)
    obs.y.segment<3>(3 * static_cast<int>(k)) = state.q.segment<3>(3 * (cfg.observed_nodes[k] - 1));
  obs.u = state.u;
  obs.u_ref = u_ref;
  obs.t = state.t;
  return obs;
}

Observation observe(const PlantState& state, const VectorXd& u_ref, const PlantConfig& cfg,
                    std::mt19937_64& rng) {
  Observation obs = observe(state, u_ref, cfg);
  if (cfg.noise_std > 0.0) {
    std::normal_distribution<double> noise(0.0, cfg.noise_std);
    for (int i = 0; i < obs.y.size(); ++i) obs.y(i) += noise(rng);
  }
  return obs;
}

LinearizedPlant::LinearizedPlant(const PlantConfig& config)
    : cfg(config), lin(linearize_plant(config)), eq(equilibrium_state(config)) {
  A_aug = lin.augmented();
}

VectorXd LinearizedPlant::derivative(const VectorXd& xi, const VectorXd& u_ref) const {
  VectorXd d = A_aug * xi;
  d.tail(cfg.m_inputs) -= cfg.lambda_true * u_ref;
  return d;
}

VectorXd LinearizedPlant::step(const VectorXd& xi, const VectorXd& u_ref, double dt) const {
  if (dt != cached_dt_) {
    exp_dt_ = (A_aug * dt).exp();
    MatrixXd b_tilde = MatrixXd::Zero(dim(), cfg.m_inputs);
    b_tilde.bottomRows(cfg.m_inputs) = -cfg.lambda_true;
    input_dt_ = A_aug.partialPivLu().solve((exp_dt_ - MatrixXd::Identity(dim(), dim())) * b_tilde);
    cached_dt_ = dt;
  }
  return exp_dt_ * xi + input_dt_ * u_ref;
}

Observation LinearizedPlant::observe(const VectorXd& xi, const VectorXd& u_ref, double t) const {
  Observation obs;
  obs.y.resize(cfg.n_obs());
  for (std::size_t k = 0; k < cfg.observed_nodes.size(); ++k)
    obs.y.segment<3>(3 * static_cast<int>(k)) =
        xi.segment<3>(3 * (cfg.observed_nodes[k] - 1)) +
        eq.q.segment<3>(3 * (cfg.observed_nodes[k] - 1));
  obs.u = xi.tail(cfg.m_inputs);
  obs.u_ref = u_ref;
  obs.t = t;
  return obs;
}

}  // namespace cassm
