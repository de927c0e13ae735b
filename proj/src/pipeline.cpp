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

#include "cassm/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace cassm {

using Eigen::Matrix2d;
using Eigen::MatrixXd;
using Eigen::Vector2d;
using Eigen::VectorXd;

void write_trajectory_csv(const std::string& path, const Trajectory& traj) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_trajectory_csv: cannot open " + path);
  const int o = traj.o();
  const int m = traj.m();
  out << "t";
  for (int i = 1; i <= o; ++i) out << ",y" << i;
  for (int i = 1; i <= m; ++i) out << ",u" << i;
  for (int i = 1; i <= m; ++i) out << ",uref" << i;
  out << "\n";
  out << std::setprecision(17);
  for (const Observation& s : traj.samples) {
    out << s.t;
    for (int i = 0; i < o; ++i) out << "," << s.y(i);
    for (int i = 0; i < m; ++i) out << "," << s.u(i);
    for (int i = 0; i < m; ++i) out << "," << s.u_ref(i);
    out << "\n";
  }
}

Trajectory read_trajectory_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_trajectory_csv: cannot open " + path);
  std::string header;
  if (!std::getline(in, header)) throw std::runtime_error("read_trajectory_csv: empty file " + path);
  int o = 0, m = 0;
  {
    std::stringstream hs(header);
    std::string col;
    while (std::getline(hs, col, ',')) {
      if (col.rfind("uref", 0) == 0)
        ++m;
      else if (col.rfind('y', 0) == 0)
        ++o;
    }
  }
  Trajectory traj;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ls(line);
    std::string cell;
    std::vector<double> row;
    while (std::getline(ls, cell, ',')) row.push_back(std::stod(cell));
    if (static_cast<int>(row.size()) != 1 + o + 2 * m)
      throw std::runtime_error("read_trajectory_csv: malformed row in " + path);
    Observation s;
    s.t = row[0];
    s.y = Eigen::Map<VectorXd>(row.data() + 1, o);
    s.u = Eigen::Map<VectorXd>(row.data() + 1 + o, m);
    s.u_ref = Eigen::Map<VectorXd>(row.data() + 1 + o + m, m);
    traj.samples.push_back(std::move(s));
  }
  if (traj.samples.size() >= 2) traj.dt = traj.samples[1].t - traj.samples[0].t;
  return traj;
}

std::vector<Trajectory> collect_decays(const PlantConfig& cfg, const DecayProtocol& protocol,
                                       int* discarded) {
  cfg.validate();
  if (protocol.pulse_magnitude < 0.0)
    throw std::invalid_argument("collect_decays: pulse_magnitude must be non-negative");
  const int m = cfg.m_inputs;
  const int pulse_steps = static_cast<int>(std::round(protocol.pulse_duration / protocol.dt));
  const int total_steps =
      pulse_steps + static_cast<int>(std::round(protocol.record_horizon / protocol.dt));
  std::vector<Trajectory> out;
  int dropped = 0;

  for (int k = 0; k < protocol.n_traj; ++k) {
    std::mt19937_64 rng(protocol.direction_seed + 1000003ULL * static_cast<std::uint64_t>(k));
    std::normal_distribution<double> normal(0.0, 1.0);
    VectorXd direction = VectorXd::Zero(m);
    if (protocol.pulse_magnitude > 0.0) {
      do
        for (int i = 0; i < m; ++i) direction(i) = normal(rng);
      while (direction.norm() < 1e-12);
      direction *= protocol.pulse_magnitude / direction.norm();
    }

    Trajectory traj;
    traj.dt = protocol.dt;
    traj.seed = protocol.direction_seed + 1000003ULL * static_cast<std::uint64_t>(k);
    traj.protocol = "decay";
    PlantState state = equilibrium_state(cfg);
    const VectorXd zero = VectorXd::Zero(m);
    bool ok = true;
    for (int step = 0; step <= total_steps; ++step) {
      const VectorXd& u_ref = (step < pulse_steps) ? direction : zero;
      traj.samples.push_back(observe(state, u_ref, cfg, rng));
      if (step == total_steps) break;
      try {
        state = advance(state, u_ref, protocol.dt, cfg);
      } catch (const std::runtime_error&) {
        ok = false;
        break;
      }
      if (state.q.norm() > 100.0 * cfg.rest_length) {
        ok = false;
        break;
      }
    }
    if (ok)
      out.push_back(std::move(traj));
    else
      ++dropped;
  }
  if (discarded) *discarded = dropped;
  return out;
}

Trajectory release_phase(const Trajectory& traj) {
  int first = 0;
  for (int i = static_cast<int>(traj.samples.size()) - 1; i >= 0; --i) {
    if (traj.samples[i].u_ref.norm() > 0.0) {
      first = i + 1;
      break;
    }
  }
  Trajectory out;
  out.dt = traj.dt;
  out.seed = traj.seed;
  out.protocol = traj.protocol;
  out.samples.assign(traj.samples.begin() + first, traj.samples.end());
  return out;
}

namespace {

// Constant-velocity Kalman forward pass + RTS backward pass for one scalar
// channel sampled at dt.
VectorXd smooth_channel(const VectorXd& y, double dt, double q, double r) {
  const int n = static_cast<int>(y.size());
  Matrix2d F;
  F << 1.0, dt, 0.0, 1.0;
  Matrix2d Q;
  Q << q * dt * dt * dt / 3.0, q * dt * dt / 2.0, q * dt * dt / 2.0, q * dt;
  const Eigen::RowVector2d H(1.0, 0.0);

  std::vector<Vector2d> x_filt(n), x_pred(n);
  std::vector<Matrix2d> P_filt(n), P_pred(n);

  Vector2d x(y(0), 0.0);
  Matrix2d P = Matrix2d::Zero();
  P(0, 0) = std::max(r, 1e-12);
  P(1, 1) = 10.0;

  for (int k = 0; k < n; ++k) {
    if (k > 0) {
      x = F * x;
      P = F * P * F.transpose() + Q;
    }
    x_pred[k] = x;
    P_pred[k] = P;
    const double s = P(0, 0) + r;
    if (!std::isfinite(s) || s <= 0.0)
      throw std::runtime_error("kalman_rts_smooth: non-finite innovation covariance at sample " +
                               std::to_string(k));
    const Vector2d gain = P.col(0) / s;
    x = x + gain * (y(k) - x(0));
    P = P - gain * H * P;
    x_filt[k] = x;
    P_filt[k] = P;
  }

  VectorXd smoothed(n);
  Vector2d xs = x_filt[n - 1];
  Matrix2d Ps = P_filt[n - 1];
  smoothed(n - 1) = xs(0);
  for (int k = n - 2; k >= 0; --k) {
    const Matrix2d C = P_filt[k] * F.transpose() * P_pred[k + 1].inverse();
    xs = x_filt[k] + C * (xs - x_pred[k + 1]);
    Ps = P_filt[k] + C * (Ps - P_pred[k + 1]) * C.transpose();
    if (!xs.allFinite())
      throw std::runtime_error("kalman_rts_smooth: non-finite smoother state at sample " +
                               std::to_string(k));
    smoothed(k) = xs(0);
  }
  return smoothed;
}

}  // namespace

Trajectory kalman_rts_smooth(const Trajectory& traj, double q_noise, double r_noise) {
  if (q_noise <= 0.0 || r_noise <= 0.0)
    throw std::invalid_argument("kalman_rts_smooth: q_noise and r_noise must be positive");
  if (traj.samples.size() < 2) return traj;
  const int n = static_cast<int>(traj.samples.size());
  const int o = traj.o();
  Trajectory out = traj;
  VectorXd channel(n);
  for (int c = 0; c < o; ++c) {
    for (int k = 0; k < n; ++k) channel(k) = traj.samples[k].y(c);
    const VectorXd smoothed = smooth_channel(channel, traj.dt, q_noise, r_noise);
    for (int k = 0; k < n; ++k) out.samples[k].y(c) = smoothed(k);
  }
  return out;
}

EmbeddedSeries delay_embed(const Trajectory& traj, int L) {
  if (L < 1) throw std::invalid_argument("delay_embed: L must be >= 1");
  const int n = static_cast<int>(traj.samples.size());
  if (n < L) throw std::invalid_argument("delay_embed: trajectory shorter than embedding depth");
  const int o = traj.o();
  const int m = traj.m();
  EmbeddedSeries series;
  series.o = o;
  series.m = m;
  series.L = L;
  series.X.resize(L * (o + m), n - (L - 1));
  series.t.resize(n - (L - 1));
  for (int k = L - 1; k < n; ++k) {
    const int col = k - (L - 1);
    for (int lag = 0; lag < L; ++lag) {
      const Observation& s = traj.samples[k - lag];
      series.X.block(lag * (o + m), col, o, 1) = s.y;
      series.X.block(lag * (o + m) + o, col, m, 1) = s.u;
    }
    series.t[col] = traj.samples[k].t;
  }
  return series;
}

EmbeddedSeries delay_embed_observations(const Trajectory& traj, int L) {
  if (L < 1) throw std::invalid_argument("delay_embed: L must be >= 1");
  const int n = static_cast<int>(traj.samples.size());
  if (n < L) throw std::invalid_argument("delay_embed: trajectory shorter than embedding depth");
  const int o = traj.o();
  EmbeddedSeries series;
  series.o = o;
  series.m = 0;
  series.L = L;
  series.X.resize(L * o, n - (L - 1));
  series.t.resize(n - (L - 1));
  for (int k = L - 1; k < n; ++k) {
    const int col = k - (L - 1);
    for (int lag = 0; lag < L; ++lag)
      series.X.block(lag * o, col, o, 1) = traj.samples[k - lag].y;
    series.t[col] = traj.samples[k].t;
  }
  return series;
}

MatrixXd estimate_derivatives(const MatrixXd& series, double dt) {
  const long n = series.cols();
  if (n < 5) throw std::invalid_argument("estimate_derivatives: need at least 5 samples");
  MatrixXd d(series.rows(), n);
  d.col(0) = (-3.0 * series.col(0) + 4.0 * series.col(1) - series.col(2)) / (2.0 * dt);
  d.col(1) = (series.col(2) - series.col(0)) / (2.0 * dt);
  for (long k = 2; k < n - 2; ++k)
    d.col(k) = (-series.col(k + 2) + 8.0 * series.col(k + 1) - 8.0 * series.col(k - 1) +
                series.col(k - 2)) /
               (12.0 * dt);
  d.col(n - 2) = (series.col(n - 1) - series.col(n - 3)) / (2.0 * dt);
  d.col(n - 1) = (3.0 * series.col(n - 1) - 4.0 * series.col(n - 2) + series.col(n - 3)) / (2.0 * dt);
  return d;
}

MatrixXd Normalization::apply_batch(const MatrixXd& X) const {
  return scale.cwiseInverse().asDiagonal() * (X.colwise() - center);
}

MatrixXd Normalization::invert_batch(const MatrixXd& Xn) const {
  return (scale.asDiagonal() * Xn).colwise() + center;
}

Normalization fit_normalization(const std::vector<EmbeddedSeries>& series, double tail_s,
                                double dt) {
  if (series.empty()) throw std::invalid_argument("fit_normalization: no series");
  const int dim = series.front().dim();
  const int o = series.front().o;
  const int m = series.front().m;
  const int L = series.front().L;
  const int tail = std::max(1, static_cast<int>(std::round(tail_s / dt)));

  VectorXd center = VectorXd::Zero(dim);
  long count = 0;
  for (const EmbeddedSeries& s : series) {
    const long n = s.X.cols();
    const long lo = std::max<long>(0, n - tail);
    for (long k = lo; k < n; ++k) {
      center += s.X.col(k);
      ++count;
    }
  }
  center /= static_cast<double>(count);

  double y_ss = 0.0, u_ss = 0.0;
  long y_n = 0, u_n = 0;
  for (const EmbeddedSeries& s : series) {
    for (long k = 0; k < s.X.cols(); ++k) {
      const VectorXd dev = s.X.col(k) - center;
      for (int lag = 0; lag < L; ++lag) {
        y_ss += dev.segment(lag * (o + m), o).squaredNorm();
        y_n += o;
        if (m > 0) {
          u_ss += dev.segment(lag * (o + m) + o, m).squaredNorm();
          u_n += m;
        }
      }
    }
  }
  const double y_scale = std::max(std::sqrt(y_ss / std::max<long>(1, y_n)), 1e-12);
  const double u_scale = m > 0 ? std::max(std::sqrt(u_ss / std::max<long>(1, u_n)), 1e-12) : 1.0;

  Normalization norm;
  norm.center = center;
  norm.scale.resize(dim);
  for (int lag = 0; lag < L; ++lag) {
    norm.scale.segment(lag * (o + m), o).setConstant(y_scale);
    if (m > 0) norm.scale.segment(lag * (o + m) + o, m).setConstant(u_scale);
  }
  return norm;
}

Dataset split_dataset(const std::vector<Trajectory>& trajs, double train_frac, double valid_frac,
                      std::uint64_t seed) {
  if (train_frac <= 0.0 || train_frac + valid_frac > 1.0)
    throw std::invalid_argument("split_dataset: invalid fractions");
  std::vector<int> idx(trajs.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  const int n = static_cast<int>(trajs.size());
  const int n_train = std::max(1, static_cast<int>(std::round(train_frac * n)));
  const int n_valid = static_cast<int>(std::round(valid_frac * n));
  Dataset ds;
  for (int i = 0; i < n; ++i) {
    if (i < n_train)
      ds.train.push_back(trajs[idx[i]]);
    else if (i < n_train + n_valid)
      ds.validation.push_back(trajs[idx[i]]);
    else
      ds.test.push_back(trajs[idx[i]]);
  }
  return ds;
}

}  // namespace cassm
