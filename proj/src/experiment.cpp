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

#include "cassm/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "cassm/model_io.hpp"

namespace cassm {

namespace fs = std::filesystem;
using Eigen::MatrixXd;
using Eigen::Vector3d;
using Eigen::VectorXd;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

ExperimentConfig default_experiment() {
  ExperimentConfig cfg;
  cfg.plant = default_plant();
  cfg.plant.noise_std = 2e-4;  // 0.2 mm mocap-like measurement noise
  // Hold the excitation long enough that release states cover the sustained
  // deflections the driven protocols visit.
  cfg.protocol.pulse_duration = 1.0;
  cfg.protocol.pulse_magnitude = 0.8;
  cfg.models.resize(3);
  cfg.models[0].kind = "cassm";
  cfg.models[1].kind = "ossm";
  cfg.models[1].n = 5;
  cfg.models[2].kind = "koopman";
  cfg.models[2].ridge = 1e-6;
  cfg.closedloop = {{"circle", 0.5, 0.5, 20.0, "circle50"},
                    {"circle", 0.8, 0.5, 20.0, "circle80"},
                    {"figure-eight", 0.5, 0.5, 20.0, "fig8"},
                    {"figure-eight", 0.5, 1.0, 20.0, "fig8-fast"}};
  cfg.mpc = MpcConfig::defaults(cfg.plant.n_obs(), cfg.plant.m_inputs);
  return cfg;
}

json to_json(const PlantConfig& cfg) {
  json j;
  j["n_nodes"] = cfg.n_nodes;
  j["mass"] = cfg.mass;
  j["k_lin"] = cfg.k_lin;
  j["k_cub"] = cfg.k_cub;
  j["c_damp_alpha"] = cfg.c_damp_alpha;
  j["c_damp_beta"] = cfg.c_damp_beta;
  j["rest_length"] = cfg.rest_length;
  j["m_inputs"] = cfg.m_inputs;
  j["lambda_true"] = matrix_to_json(cfg.lambda_true);
  j["input_gain_linear"] = matrix_to_json(cfg.input_gain_linear);
  j["input_gain_state"] = cfg.input_gain_state;
  j["observed_nodes"] = cfg.observed_nodes;
  j["gravity"] = cfg.gravity;
  j["noise_std"] = cfg.noise_std;
  j["sim_substeps"] = cfg.sim_substeps;
  return j;
}

PlantConfig plant_from_json(const json& j) {
  PlantConfig cfg = default_plant();
  if (j.contains("n_nodes")) cfg.n_nodes = j.at("n_nodes").get<int>();
  if (j.contains("mass")) cfg.mass = j.at("mass").get<double>();
  if (j.contains("k_lin")) cfg.k_lin = j.at("k_lin").get<double>();
  if (j.contains("k_cub")) cfg.k_cub = j.at("k_cub").get<double>();
  if (j.contains("c_damp_alpha")) cfg.c_damp_alpha = j.at("c_damp_alpha").get<double>();
  if (j.contains("c_damp_beta")) cfg.c_damp_beta = j.at("c_damp_beta").get<double>();
  if (j.contains("rest_length")) cfg.rest_length = j.at("rest_length").get<double>();
  if (j.contains("m_inputs")) cfg.m_inputs = j.at("m_inputs").get<int>();
  if (j.contains("lambda_true")) cfg.lambda_true = matrix_from_json(j.at("lambda_true"));
  if (j.contains("input_gain_linear"))
    cfg.input_gain_linear = matrix_from_json(j.at("input_gain_linear"));
  if (j.contains("input_gain_state")) cfg.input_gain_state = j.at("input_gain_state").get<double>();
  if (j.contains("observed_nodes"))
    cfg.observed_nodes = j.at("observed_nodes").get<std::vector<int>>();
  if (j.contains("gravity")) cfg.gravity = j.at("gravity").get<double>();
  if (j.contains("noise_std")) cfg.noise_std = j.at("noise_std").get<double>();
  if (j.contains("sim_substeps")) cfg.sim_substeps = j.at("sim_substeps").get<int>();
  cfg.validate();
  return cfg;
}

namespace {

json to_json(const ModelSpec& spec) {
  json j;
  j["kind"] = spec.kind;
  j["n"] = spec.n;
  j["L"] = spec.L;
  j["features"] = spec.features;
  j["rff_count"] = spec.rff_count;
  j["lengthscale"] = spec.lengthscale;
  j["rff_seed"] = spec.rff_seed;
  j["ridge"] = spec.ridge;
  j["lambda_all_lags"] = spec.lambda_all_lags;
  j["ref_mode"] = spec.ref_mode;
  j["poly_degree"] = spec.poly_degree;
  j["delays"] = spec.delays;
  return j;
}

ModelSpec model_spec_from_json(const json& j) {
  ModelSpec spec;
  spec.kind = j.at("kind").get<std::string>();
  if (j.contains("n")) spec.n = j.at("n").get<int>();
  if (j.contains("L")) spec.L = j.at("L").get<int>();
  if (j.contains("features")) spec.features = j.at("features").get<std::string>();
  if (j.contains("rff_count")) spec.rff_count = j.at("rff_count").get<int>();
  if (j.contains("lengthscale")) spec.lengthscale = j.at("lengthscale").get<double>();
  if (j.contains("rff_seed")) spec.rff_seed = j.at("rff_seed").get<std::uint64_t>();
  if (j.contains("ridge")) spec.ridge = j.at("ridge").get<double>();
  if (j.contains("lambda_all_lags")) spec.lambda_all_lags = j.at("lambda_all_lags").get<bool>();
  if (j.contains("ref_mode")) spec.ref_mode = j.at("ref_mode").get<std::string>();
  if (j.contains("poly_degree")) spec.poly_degree = j.at("poly_degree").get<int>();
  if (j.contains("delays")) spec.delays = j.at("delays").get<int>();
  return spec;
}

json to_json(const MpcConfig& cfg) {
  json j;
  j["horizon"] = cfg.horizon;
  j["dt"] = cfg.dt;
  j["actuation_period"] = cfg.actuation_period;
  j["q_weights"] = vector_to_json(cfg.q_weights);
  j["qf_weights"] = vector_to_json(cfg.qf_weights);
  j["rdelta_weights"] = vector_to_json(cfg.rdelta_weights);
  j["u_min"] = vector_to_json(cfg.u_min);
  j["u_max"] = vector_to_json(cfg.u_max);
  j["y_bounds_enabled"] = cfg.y_bounds_enabled;
  if (cfg.y_bounds_enabled) {
    j["y_min"] = vector_to_json(cfg.y_min);
    j["y_max"] = vector_to_json(cfg.y_max);
  }
  j["perf_rows"] = cfg.perf_rows;
  j["scp_iters"] = cfg.scp_iters;
  j["qp_tol"] = cfg.qp_tol;
  j["qp_max_iters"] = cfg.qp_max_iters;
  j["trust_region"] = cfg.trust_region;
  return j;
}

MpcConfig mpc_from_json(const json& j, int o, int m) {
  MpcConfig cfg = MpcConfig::defaults(o, m);
  if (j.contains("horizon")) cfg.horizon = j.at("horizon").get<int>();
  if (j.contains("dt")) cfg.dt = j.at("dt").get<double>();
  if (j.contains("actuation_period")) cfg.actuation_period = j.at("actuation_period").get<double>();
  if (j.contains("q_weights")) cfg.q_weights = vector_from_json(j.at("q_weights"));
  if (j.contains("qf_weights")) cfg.qf_weights = vector_from_json(j.at("qf_weights"));
  if (j.contains("rdelta_weights")) cfg.rdelta_weights = vector_from_json(j.at("rdelta_weights"));
  if (j.contains("u_min")) cfg.u_min = vector_from_json(j.at("u_min"));
  if (j.contains("u_max")) cfg.u_max = vector_from_json(j.at("u_max"));
  if (j.contains("y_bounds_enabled")) cfg.y_bounds_enabled = j.at("y_bounds_enabled").get<bool>();
  if (j.contains("y_min")) cfg.y_min = vector_from_json(j.at("y_min"));
  if (j.contains("y_max")) cfg.y_max = vector_from_json(j.at("y_max"));
  if (j.contains("perf_rows")) cfg.perf_rows = j.at("perf_rows").get<std::vector<int>>();
  if (j.contains("scp_iters")) cfg.scp_iters = j.at("scp_iters").get<int>();
  if (j.contains("qp_tol")) cfg.qp_tol = j.at("qp_tol").get<double>();
  if (j.contains("qp_max_iters")) cfg.qp_max_iters = j.at("qp_max_iters").get<int>();
  if (j.contains("trust_region")) cfg.trust_region = j.at("trust_region").get<double>();
  return cfg;
}

}  // namespace

json to_json(const ExperimentConfig& cfg) {
  json j;
  j["plant"] = to_json(cfg.plant);
  j["protocol"] = {{"n_traj", cfg.protocol.n_traj},
                   {"pulse_duration", cfg.protocol.pulse_duration},
                   {"pulse_magnitude", cfg.protocol.pulse_magnitude},
                   {"record_horizon", cfg.protocol.record_horizon},
                   {"dt", cfg.protocol.dt}};
  j["smoothing"] = {{"enabled", cfg.smoothing.enabled},
                    {"q_noise", cfg.smoothing.q_noise},
                    {"r_noise", cfg.smoothing.r_noise}};
  j["calibration"] = {{"n_traj", cfg.calibration.n_traj},
                      {"duration_s", cfg.calibration.duration_s},
                      {"magnitude", cfg.calibration.magnitude},
                      {"hold_s", cfg.calibration.hold_s}};
  j["models"] = json::array();
  for (const ModelSpec& spec : cfg.models) j["models"].push_back(to_json(spec));
  j["openloop"] = {{"total_s", cfg.openloop.total_s},
                   {"segment_steps", cfg.openloop.segment_steps},
                   {"dt", cfg.openloop.dt},
                   {"staircase_hold_s", cfg.openloop.staircase_hold_s},
                   {"staircase_magnitude", cfg.openloop.staircase_magnitude}};
  j["closedloop"] = json::array();
  for (const ClosedLoopSpec& spec : cfg.closedloop)
    j["closedloop"].push_back({{"shape", spec.shape},
                               {"radius_fraction", spec.radius_fraction},
                               {"angular_velocity", spec.angular_velocity},
                               {"duration_s", spec.duration_s},
                               {"tag", spec.tag}});
  j["mpc"] = to_json(cfg.mpc);
  j["workspace_radius"] = cfg.workspace_radius;
  j["seed"] = cfg.seed;
  j["out_dir"] = cfg.out_dir;
  return j;
}

ExperimentConfig experiment_from_json(const json& j) {
  ExperimentConfig cfg = default_experiment();
  if (j.contains("plant")) cfg.plant = plant_from_json(j.at("plant"));
  if (j.contains("protocol")) {
    const json& p = j.at("protocol");
    if (p.contains("n_traj")) cfg.protocol.n_traj = p.at("n_traj").get<int>();
    if (p.contains("pulse_duration")) cfg.protocol.pulse_duration = p.at("pulse_duration").get<double>();
    if (p.contains("pulse_magnitude"))
      cfg.protocol.pulse_magnitude = p.at("pulse_magnitude").get<double>();
    if (p.contains("record_horizon"))
      cfg.protocol.record_horizon = p.at("record_horizon").get<double>();
    if (p.contains("dt")) cfg.protocol.dt = p.at("dt").get<double>();
  }
  if (j.contains("smoothing")) {
    const json& s = j.at("smoothing");
    if (s.contains("enabled")) cfg.smoothing.enabled = s.at("enabled").get<bool>();
    if (s.contains("q_noise")) cfg.smoothing.q_noise = s.at("q_noise").get<double>();
    if (s.contains("r_noise")) cfg.smoothing.r_noise = s.at("r_noise").get<double>();
  }
  if (j.contains("calibration")) {
    const json& c = j.at("calibration");
    if (c.contains("n_traj")) cfg.calibration.n_traj = c.at("n_traj").get<int>();
    if (c.contains("duration_s")) cfg.calibration.duration_s = c.at("duration_s").get<double>();
    if (c.contains("magnitude")) cfg.calibration.magnitude = c.at("magnitude").get<double>();
    if (c.contains("hold_s")) cfg.calibration.hold_s = c.at("hold_s").get<double>();
  }
  if (j.contains("models")) {
    cfg.models.clear();
    for (const json& mj : j.at("models")) cfg.models.push_back(model_spec_from_json(mj));
  }
  for (const ModelSpec& spec : cfg.models)
    if (spec.kind != "cassm" && spec.kind != "ossm" && spec.kind != "koopman")
      throw std::invalid_argument("experiment config: unknown model kind " + spec.kind);
  if (j.contains("openloop")) {
    const json& o = j.at("openloop");
    if (o.contains("total_s")) cfg.openloop.total_s = o.at("total_s").get<double>();
    if (o.contains("segment_steps")) cfg.openloop.segment_steps = o.at("segment_steps").get<int>();
    if (o.contains("dt")) cfg.openloop.dt = o.at("dt").get<double>();
    if (o.contains("staircase_hold_s"))
      cfg.openloop.staircase_hold_s = o.at("staircase_hold_s").get<double>();
    if (o.contains("staircase_magnitude"))
      cfg.openloop.staircase_magnitude = o.at("staircase_magnitude").get<double>();
  }
  if (j.contains("closedloop")) {
    cfg.closedloop.clear();
    for (const json& cj : j.at("closedloop")) {
      ClosedLoopSpec spec;
      if (cj.contains("shape")) spec.shape = cj.at("shape").get<std::string>();
      if (cj.contains("radius_fraction")) spec.radius_fraction = cj.at("radius_fraction").get<double>();
      if (cj.contains("angular_velocity"))
        spec.angular_velocity = cj.at("angular_velocity").get<double>();
      if (cj.contains("duration_s")) spec.duration_s = cj.at("duration_s").get<double>();
      if (cj.contains("tag")) spec.tag = cj.at("tag").get<std::string>();
      cfg.closedloop.push_back(spec);
    }
  }
  if (j.contains("mpc")) cfg.mpc = mpc_from_json(j.at("mpc"), cfg.plant.n_obs(), cfg.plant.m_inputs);
  if (j.contains("workspace_radius")) cfg.workspace_radius = j.at("workspace_radius").get<double>();
  if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("out_dir")) cfg.out_dir = j.at("out_dir").get<std::string>();
  return cfg;
}

std::string config_hash(const json& j) {
  const std::string dump = j.dump();
  std::uint64_t hash = 1469598103934665603ULL;
  for (unsigned char c : dump) {
    hash ^= c;
    hash *= 1099511628211ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << hash;
  return os.str();
}

// ---------------------------------------------------------------------------
// References and excitation
// ---------------------------------------------------------------------------

namespace {

double smoothstep(double tau) {
  tau = std::clamp(tau, 0.0, 1.0);
  return tau * tau * (3.0 - 2.0 * tau);
}

}  // namespace

VectorXd ReferenceTrajectory::at(double t) const {
  const double s = ramp_s > 0.0 ? smoothstep(t / ramp_s) : 1.0;
  const double w = angular_velocity;
  Vector3d p = center;
  if (shape == "figure-eight") {
    p.x() += s * radius * std::sin(w * t);
    p.y() += s * radius * std::sin(2.0 * w * t);
  } else {
    p.x() += s * radius * std::cos(w * t);
    p.y() += s * radius * std::sin(w * t);
  }
  return p;
}

ReferenceTrajectory make_reference(const ClosedLoopSpec& spec, const Vector3d& tip_rest,
                                   double workspace_radius) {
  ReferenceTrajectory ref;
  ref.shape = spec.shape;
  ref.center = tip_rest;
  ref.radius = spec.radius_fraction * workspace_radius;
  ref.angular_velocity = spec.angular_velocity;
  ref.duration_s = spec.duration_s;
  return ref;
}

double measure_workspace_radius(const PlantConfig& cfg) {
  PlantConfig quiet = cfg;
  quiet.noise_std = 0.0;
  PlantState state = equilibrium_state(quiet);
  const Vector3d tip_rest = state.q.tail<3>();
  VectorXd u_ref = VectorXd::Zero(quiet.m_inputs);
  u_ref(0) = 1.0;
  const double dt = 0.02;
  for (int k = 0; k < static_cast<int>(6.0 / dt); ++k) state = advance(state, u_ref, dt, quiet);
  const Vector3d tip = state.q.tail<3>();
  return (tip.head<2>() - tip_rest.head<2>()).norm();
}

std::vector<VectorXd> staircase_inputs(int m, int steps, double dt, double hold_s,
                                       double magnitude, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uniform(-magnitude, magnitude);
  const int hold_steps = std::max(1, static_cast<int>(std::round(hold_s / dt)));
  std::vector<VectorXd> out(steps, VectorXd::Zero(m));
  VectorXd level = VectorXd::Zero(m);
  for (int k = 0; k < steps; ++k) {
    if (k % hold_steps == 0)
      for (int i = 0; i < m; ++i) level(i) = uniform(rng);
    out[k] = level;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Open-loop benchmark
// ---------------------------------------------------------------------------

namespace {

Trajectory simulate_staircase(const PlantConfig& cfg, const std::vector<VectorXd>& inputs,
                              double dt, std::uint64_t noise_seed) {
  std::mt19937_64 rng(noise_seed);
  Trajectory traj;
  traj.dt = dt;
  traj.protocol = "staircase";
  traj.seed = noise_seed;
  PlantState state = equilibrium_state(cfg);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    traj.samples.push_back(observe(state, inputs[k], cfg, rng));
    state = advance(state, inputs[k], dt, cfg);
  }
  return traj;
}

VectorXd embedded_start(const Trajectory& traj, int k0, int L, bool with_u) {
  const int o = traj.o();
  const int m = traj.m();
  const int block = with_u ? o + m : o;
  VectorXd x(L * block);
  for (int lag = 0; lag < L; ++lag) {
    const Observation& s = traj.samples[k0 - lag];
    x.segment(lag * block, o) = s.y;
    if (with_u) x.segment(lag * block + o, m) = s.u;
  }
  return x;
}

double segment_rmse_mm(const MatrixXd& y_pred, const Trajectory& traj, int k0, int steps) {
  double ss = 0.0;
  long count = 0;
  for (int k = 1; k <= steps; ++k) {
    const VectorXd err = y_pred.col(k) - traj.samples[k0 + k].y;
    ss += err.squaredNorm();
    count += err.size();
  }
  return std::sqrt(ss / static_cast<double>(count)) * 1000.0;
}

}  // namespace

OpenLoopReport open_loop_benchmark(const ExperimentConfig& cfg, const ManifoldModel* cassm_model,
                                   const OssmModel* ossm_model,
                                   const KoopmanModel* koopman_model) {
  const double dt = cfg.openloop.dt;
  const int seg_steps = cfg.openloop.segment_steps;
  const int n_scored = static_cast<int>(std::round(cfg.openloop.total_s / dt));
  int max_L = 1;
  if (cassm_model) max_L = std::max(max_L, cassm_model->dims.L);
  if (ossm_model) max_L = std::max(max_L, ossm_model->L);
  if (koopman_model) max_L = std::max(max_L, koopman_model->delays + 1);
  const int preroll = std::max(max_L - 1, 1);

  const auto inputs = staircase_inputs(cfg.plant.m_inputs, preroll + n_scored + 1, dt,
                                       cfg.openloop.staircase_hold_s,
                                       cfg.openloop.staircase_magnitude, cfg.seed + 100);
  const Trajectory run = simulate_staircase(cfg.plant, inputs, dt, cfg.seed + 200);

  OpenLoopReport report;
  const int n_segments = n_scored / seg_steps;

  auto score_model = [&](const std::string& name, auto&& predict) {
    std::vector<SegmentScore> scores;
    for (int seg = 0; seg < n_segments; ++seg) {
      const int k0 = preroll + seg * seg_steps;
      std::vector<VectorXd> uref(seg_steps);
      for (int k = 0; k < seg_steps; ++k) uref[k] = run.samples[k0 + k].u_ref;
      SegmentScore score;
      try {
        const MatrixXd y_pred = predict(k0, uref);
        if (y_pred.cols() < seg_steps + 1 || !y_pred.allFinite()) {
          score.diverged = true;
        } else {
          score.rmse_mm = segment_rmse_mm(y_pred, run, k0, seg_steps);
          if (!std::isfinite(score.rmse_mm)) score.diverged = true;
        }
      } catch (const DivergenceError&) {
        score.diverged = true;
      }
      scores.push_back(score);
    }
    report.model_names.push_back(name);
    report.segments.push_back(std::move(scores));
  };

  if (cassm_model) {
    score_model("cassm", [&](int k0, const std::vector<VectorXd>& uref) {
      const VectorXd x0 = embedded_start(run, k0, cassm_model->dims.L, true);
      return predict_open_loop(*cassm_model, x0, uref, dt, seg_steps).y;
    });
  }
  if (ossm_model) {
    score_model("ossm", [&](int k0, const std::vector<VectorXd>& uref) {
      const VectorXd x0 = embedded_start(run, k0, ossm_model->L, false);
      const BaselinePrediction pred = predict_ossm(*ossm_model, x0, uref, dt, seg_steps);
      if (pred.diverged) throw DivergenceError(pred.diverged_step);
      return pred.y;
    });
  }
  if (koopman_model) {
    score_model("koopman", [&](int k0, const std::vector<VectorXd>& uref) {
      const VectorXd x0 = embedded_start(run, k0, koopman_model->delays + 1, false);
      const BaselinePrediction pred = predict_koopman(*koopman_model, x0, uref, seg_steps);
      if (pred.diverged) throw DivergenceError(pred.diverged_step);
      return pred.y;
    });
  }

  for (std::size_t i = 0; i < report.segments.size(); ++i) {
    std::vector<double> ok;
    int diverged = 0;
    for (const SegmentScore& s : report.segments[i]) {
      if (s.diverged)
        ++diverged;
      else
        ok.push_back(s.rmse_mm);
    }
    report.diverged_count.push_back(diverged);
    if (ok.empty()) {
      report.mean_rmse_mm.push_back(std::numeric_limits<double>::quiet_NaN());
      report.median_rmse_mm.push_back(std::numeric_limits<double>::quiet_NaN());
    } else {
      double sum = 0.0;
      for (double v : ok) sum += v;
      report.mean_rmse_mm.push_back(sum / static_cast<double>(ok.size()));
      std::sort(ok.begin(), ok.end());
      report.median_rmse_mm.push_back(ok[ok.size() / 2]);
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

namespace {

std::vector<Trajectory> collect_calibration(const ExperimentConfig& cfg) {
  std::vector<Trajectory> out;
  const int steps = static_cast<int>(std::round(cfg.calibration.duration_s / cfg.protocol.dt));
  for (int k = 0; k < cfg.calibration.n_traj; ++k) {
    const auto inputs =
        staircase_inputs(cfg.plant.m_inputs, steps, cfg.protocol.dt, cfg.calibration.hold_s,
                         cfg.calibration.magnitude, cfg.seed + 5000 + 13ULL * k);
    Trajectory traj =
        simulate_staircase(cfg.plant, inputs, cfg.protocol.dt, cfg.seed + 6000 + 17ULL * k);
    traj.protocol = "calibration";
    out.push_back(std::move(traj));
  }
  return out;
}

DecayProtocol seeded_protocol(const ExperimentConfig& cfg) {
  DecayProtocol p = cfg.protocol;
  p.direction_seed = cfg.seed;
  return p;
}

struct LoadedData {
  std::vector<Trajectory> decays;
  std::vector<Trajectory> calibration;
};

LoadedData load_data_dir(const std::string& data_dir) {
  const json manifest = load_json((fs::path(data_dir) / "manifest.json").string());
  LoadedData data;
  for (const json& f : manifest.at("decay_files"))
    data.decays.push_back(read_trajectory_csv((fs::path(data_dir) / f.get<std::string>()).string()));
  for (const json& f : manifest.at("calibration_files"))
    data.calibration.push_back(
        read_trajectory_csv((fs::path(data_dir) / f.get<std::string>()).string()));
  return data;
}

CassmOptions cassm_options(const ExperimentConfig& cfg, const ModelSpec& spec) {
  CassmOptions opt;
  opt.n = spec.n;
  opt.L = spec.L;
  opt.feature_kind = spec.features == "polynomial" ? FeatureMapSpec::Kind::polynomial
                                                   : FeatureMapSpec::Kind::rff;
  opt.rff_count = spec.rff_count;
  opt.rff_lengthscale = spec.lengthscale;
  opt.rff_seed = spec.rff_seed;
  opt.poly_degree = spec.poly_degree;
  opt.ridge = spec.ridge;
  opt.smooth = cfg.smoothing.enabled;
  opt.q_noise = cfg.smoothing.q_noise;
  opt.r_noise = cfg.smoothing.r_noise;
  opt.lambda_all_lags = spec.lambda_all_lags;
  opt.ref_mode = spec.ref_mode == "exact" ? RefMode::exact : RefMode::approx;
  return opt;
}

json eigs_to_json(const Eigen::VectorXcd& eigs) {
  json arr = json::array();
  for (long i = 0; i < eigs.size(); ++i)
    arr.push_back({{"re", eigs(i).real()}, {"im", eigs(i).imag()}});
  return arr;
}

}  // namespace

int cmd_collect(const ExperimentConfig& cfg, const std::string& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (!fs::is_directory(out_dir)) {
    std::cerr << "collect: cannot create output directory " << out_dir << "\n";
    return 2;
  }
  int discarded = 0;
  const auto decays = collect_decays(cfg.plant, seeded_protocol(cfg), &discarded);
  const auto calibration = collect_calibration(cfg);

  json manifest;
  manifest["version"] = kVersion;
  manifest["config_hash"] = config_hash(to_json(cfg));
  manifest["seed"] = cfg.seed;
  manifest["discarded"] = discarded;
  manifest["decay_files"] = json::array();
  manifest["calibration_files"] = json::array();
  manifest["trajectory_seeds"] = json::array();

  for (std::size_t i = 0; i < decays.size(); ++i) {
    std::ostringstream name;
    name << "decay_" << std::setw(3) << std::setfill('0') << i << ".csv";
    write_trajectory_csv((fs::path(out_dir) / name.str()).string(), decays[i]);
    manifest["decay_files"].push_back(name.str());
    manifest["trajectory_seeds"].push_back(decays[i].seed);
  }
  for (std::size_t i = 0; i < calibration.size(); ++i) {
    std::ostringstream name;
    name << "calibration_" << std::setw(3) << std::setfill('0') << i << ".csv";
    write_trajectory_csv((fs::path(out_dir) / name.str()).string(), calibration[i]);
    manifest["calibration_files"].push_back(name.str());
  }
  save_json((fs::path(out_dir) / "manifest.json").string(), manifest);
  if (discarded > 0)
    std::cerr << "collect: discarded " << discarded << " blown-up trajectories\n";
  std::cout << "collect: wrote " << decays.size() << " decay + " << calibration.size()
            << " calibration trajectories to " << out_dir << "\n";
  return 0;
}

int cmd_fit(const ExperimentConfig& cfg, const std::string& data_dir, const std::string& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  LoadedData data;
  try {
    data = load_data_dir(data_dir);
  } catch (const std::exception& e) {
    std::cerr << "fit: " << e.what() << "\n";
    return 2;
  }

  json report;
  report["version"] = kVersion;
  report["config_hash"] = config_hash(to_json(cfg));
  bool any_failed = false;

  PlantLinearization lin;
  bool have_lin = true;
  try {
    lin = linearize_plant(cfg.plant);
  } catch (const std::exception&) {
    have_lin = false;
  }

  for (const ModelSpec& spec : cfg.models) {
    json entry;
    entry["kind"] = spec.kind;
    try {
      if (spec.kind == "cassm") {
        FitReport fit_report;
        const ManifoldModel model = fit_cassm(data.decays, cassm_options(cfg, spec), &fit_report);
        save_json((fs::path(out_dir) / "cassm.json").string(), to_json(model));
        entry["explained_variance"] = vector_to_json(
            fit_report.explained_variance.head(std::min<long>(spec.n, fit_report.explained_variance.size())));
        entry["w_residual"] = fit_report.w_residual;
        entry["r_residual"] = fit_report.r_residual;
        entry["lambda_eigs"] = eigs_to_json(fit_report.lambda_eigs);
        entry["j0_eigs"] = eigs_to_json(fit_report.j0_eigs);
        entry["j0_stable"] = fit_report.j0_stable;
        entry["invariance_residual"] = fit_report.invariance;
        entry["spectral_overlap"] = to_string(fit_report.spectral.overlap);
        entry["warnings"] = fit_report.warnings;
        if (have_lin) {
          Eigen::EigenSolver<MatrixXd> es(cfg.plant.lambda_true, false);
          entry["lambda_true_eigs"] = eigs_to_json(es.eigenvalues());
        }
      } else if (spec.kind == "ossm") {
        OssmOptions opt;
        opt.n = spec.n;
        opt.L = spec.L;
        opt.degree = spec.poly_degree;
        opt.ridge = spec.ridge;
        opt.smooth = cfg.smoothing.enabled;
        opt.q_noise = cfg.smoothing.q_noise;
        opt.r_noise = cfg.smoothing.r_noise;
        const OssmModel model = fit_ossm(data.decays, data.calibration, opt);
        save_json((fs::path(out_dir) / "ossm.json").string(), to_json(model));
        entry["n"] = model.n;
      } else if (spec.kind == "koopman") {
        KoopmanOptions opt;
        opt.degree = spec.poly_degree;
        opt.delays = spec.delays;
        opt.ridge = spec.ridge;
        opt.smooth = cfg.smoothing.enabled;
        opt.q_noise = cfg.smoothing.q_noise;
        opt.r_noise = cfg.smoothing.r_noise;
        // Same training corpus as the manifold models; the pulse phases
        // carry the input information EDMD needs for B_d.
        const KoopmanModel model = fit_koopman(data.decays, opt);
        save_json((fs::path(out_dir) / "koopman.json").string(), to_json(model));
        entry["lifted_dim"] = model.lifted_dim;
        entry["spectral_radius"] = model.spectral_radius;
        if (model.spectral_radius > 1.0 + 1e-6)
          entry["warnings"] = {"one-step operator spectral radius exceeds 1"};
      }
      entry["status"] = "ok";
    } catch (const std::exception& e) {
      entry["status"] = "failed";
      entry["error"] = e.what();
      any_failed = true;
      std::cerr << "fit: " << spec.kind << " failed: " << e.what() << "\n";
    }
    report["models"].push_back(entry);
  }

  save_json((fs::path(out_dir) / "fit_report.json").string(), report);
  std::cout << "fit: report written to " << (fs::path(out_dir) / "fit_report.json").string()
            << "\n";
  return any_failed ? 1 : 0;
}

int cmd_predict(const ExperimentConfig& cfg, const std::string& models_dir,
                const std::string& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);

  ManifoldModel cassm_model;
  OssmModel ossm_model;
  KoopmanModel koopman_model;
  const ManifoldModel* cassm_p = nullptr;
  const OssmModel* ossm_p = nullptr;
  const KoopmanModel* koopman_p = nullptr;

  for (const ModelSpec& spec : cfg.models) {
    const fs::path path = fs::path(models_dir) / (spec.kind + ".json");
    if (!fs::exists(path)) {
      std::cerr << "predict: missing model file " << path << "\n";
      return 2;
    }
    try {
      const json j = load_json(path.string());
      if (spec.kind == "cassm") {
        cassm_model = manifold_from_json(j);
        cassm_p = &cassm_model;
      } else if (spec.kind == "ossm") {
        ossm_model = ossm_from_json(j);
        ossm_p = &ossm_model;
      } else if (spec.kind == "koopman") {
        koopman_model = koopman_from_json(j);
        koopman_p = &koopman_model;
      }
    } catch (const std::exception& e) {
      std::cerr << "predict: " << e.what() << "\n";
      return 2;
    }
  }

  const OpenLoopReport report = open_loop_benchmark(cfg, cassm_p, ossm_p, koopman_p);

  {
    std::ofstream csv((fs::path(out_dir) / "segments.csv").string());
    csv << "model,segment,rmse_mm,diverged\n" << std::setprecision(17);
    for (std::size_t i = 0; i < report.model_names.size(); ++i)
      for (std::size_t s = 0; s < report.segments[i].size(); ++s)
        csv << report.model_names[i] << "," << s << "," << report.segments[i][s].rmse_mm << ","
            << (report.segments[i][s].diverged ? 1 : 0) << "\n";
  }

  json summary;
  summary["version"] = kVersion;
  summary["config_hash"] = config_hash(to_json(cfg));
  summary["table"] = json::array();
  std::cout << "model        mean_rmse_mm  median_rmse_mm  diverged_segments\n";
  for (std::size_t i = 0; i < report.model_names.size(); ++i) {
    summary["table"].push_back({{"model", report.model_names[i]},
                                {"mean_rmse_mm", report.mean_rmse_mm[i]},
                                {"median_rmse_mm", report.median_rmse_mm[i]},
                                {"diverged_segments", report.diverged_count[i]}});
    std::cout << std::left << std::setw(13) << report.model_names[i] << std::setw(14)
              << report.mean_rmse_mm[i] << std::setw(16) << report.median_rmse_mm[i]
              << report.diverged_count[i] << "\n";
  }
  save_json((fs::path(out_dir) / "openloop_summary.json").string(), summary);
  return 0;
}

int cmd_track(const ExperimentConfig& cfg, const std::string& model_path,
              const std::string& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);

  std::unique_ptr<ReducedOrderModel> rom;
  std::string kind;
  try {
    const json j = load_json(model_path);
    kind = model_kind(j);
    if (kind == "cassm-model/1")
      rom = std::make_unique<CassmRom>(manifold_from_json(j));
    else if (kind == "ossm/1")
      rom = std::make_unique<OssmRom>(ossm_from_json(j));
    else
      rom = std::make_unique<KoopmanRom>(koopman_from_json(j));
  } catch (const std::exception& e) {
    std::cerr << "track: " << e.what() << "\n";
    return 2;
  }

  const double workspace =
      cfg.workspace_radius > 0.0 ? cfg.workspace_radius : measure_workspace_radius(cfg.plant);
  const Vector3d tip_rest = equilibrium_state(cfg.plant).q.tail<3>();

  json summary;
  summary["version"] = kVersion;
  summary["config_hash"] = config_hash(to_json(cfg));
  summary["model"] = kind;
  summary["workspace_radius_m"] = workspace;
  summary["runs"] = json::array();

  for (const ClosedLoopSpec& spec : cfg.closedloop) {
    const ReferenceTrajectory ref = make_reference(spec, tip_rest, workspace);
    ClosedLoopOptions options;
    options.duration_s = spec.duration_s;
    options.noise_seed = cfg.seed + 777;
    const ClosedLoopResult result = closed_loop_run(
        cfg.plant, *rom, cfg.mpc, [&](double t) { return ref.at(t); }, options);

    const std::string tag = spec.tag.empty() ? spec.shape : spec.tag;
    const std::string log_name = "track_" + tag + ".csv";
    {
      std::ofstream csv((fs::path(out_dir) / log_name).string());
      const int o = result.log.o();
      const int m = result.log.m();
      const int p = static_cast<int>(cfg.mpc.perf_rows.size());
      csv << "t";
      for (int i = 1; i <= o; ++i) csv << ",y" << i;
      for (int i = 1; i <= p; ++i) csv << ",yref" << i;
      for (int i = 1; i <= m; ++i) csv << ",u" << i;
      for (int i = 1; i <= m; ++i) csv << ",uref" << i;
      csv << ",solve_ms\n" << std::setprecision(17);
      const int spc = cfg.mpc.steps_per_command();
      for (std::size_t k = 0; k < result.log.samples.size(); ++k) {
        const Observation& s = result.log.samples[k];
        csv << s.t;
        for (int i = 0; i < o; ++i) csv << "," << s.y(i);
        for (int i = 0; i < p; ++i) csv << "," << result.y_ref(i, static_cast<long>(k));
        for (int i = 0; i < m; ++i) csv << "," << s.u(i);
        for (int i = 0; i < m; ++i) csv << "," << s.u_ref(i);
        const std::size_t solve_idx = k / spc;
        csv << "," << (k % spc == 0 && solve_idx < result.solve_ms.size()
                           ? result.solve_ms[solve_idx]
                           : 0.0);
        csv << "\n";
      }
    }

    json run;
    run["tag"] = tag;
    run["shape"] = spec.shape;
    run["radius_fraction"] = spec.radius_fraction;
    run["angular_velocity"] = spec.angular_velocity;
    run["log"] = log_name;
    run["diverged"] = result.diverged;
    if (result.diverged)
      run["rmse_mm"] = "Diverged";
    else
      run["rmse_mm"] = result.rmse_mm;
    run["mean_solve_ms"] = result.mean_solve_ms;
    run["max_solve_ms"] = result.max_solve_ms;
    run["budget_exceeded"] = result.max_solve_ms > cfg.mpc.actuation_period * 1000.0;
    summary["runs"].push_back(run);

    std::cout << "track[" << tag << "]: "
              << (result.diverged ? std::string("Diverged")
                                  : std::to_string(result.rmse_mm) + " mm RMSE")
              << ", mean solve " << result.mean_solve_ms << " ms\n";
  }

  save_json((fs::path(out_dir) / "track_summary.json").string(), summary);
  return 0;
}

int cmd_diagnose(const std::string& model_path, bool json_output) {
  json j;
  try {
    j = load_json(model_path);
    model_kind(j);
  } catch (const std::exception& e) {
    std::cerr << "diagnose: " << e.what() << "\n";
    return 2;
  }

  json out;
  const std::string kind = model_kind(j);
  out["model"] = kind;
  if (kind == "cassm-model/1") {
    const ManifoldModel model = manifold_from_json(j);
    const SpectralReport report = spectral_diagnostic(model);
    out["dims"] = {{"o", model.dims.o}, {"m", model.dims.m}, {"L", model.dims.L},
                   {"n", model.dims.n}};
    out["spectral_overlap"] = to_string(report.overlap);
    out["reduced_eigs"] = eigs_to_json(report.reduced_eigs);
    out["actuator_eigs"] = eigs_to_json(report.actuator_eigs);
    out["ref_mode"] = model.ref_mode == RefMode::exact ? "exact" : "approx";
    if (model.r_spec.kind == FeatureMapSpec::Kind::rff) {
      // Kernel sanity of the frozen RFF map: φ(x)ᵀφ(x) should be close to 1.
      std::mt19937_64 rng(12345);
      std::normal_distribution<double> normal(0.0, 1.0);
      double worst = 0.0;
      for (int trial = 0; trial < 50; ++trial) {
        VectorXd x(model.r_spec.input_dim);
        for (long i = 0; i < x.size(); ++i) x(i) = normal(rng);
        const VectorXd phi = model.r_spec.eval(x);
        worst = std::max(worst, std::abs(phi.squaredNorm() - 1.0));
      }
      out["rff_kernel_diag_max_abs_err"] = worst;
    }
  } else if (kind == "ossm/1") {
    const OssmModel model = ossm_from_json(j);
    out["dims"] = {{"o", model.o}, {"m", model.m}, {"L", model.L}, {"n", model.n}};
  } else {
    const KoopmanModel model = koopman_from_json(j);
    out["dims"] = {{"o", model.o}, {"m", model.m}, {"delays", model.delays}};
    out["lifted_dim"] = model.lifted_dim;
    out["spectral_radius"] = model.spectral_radius;
  }

  if (json_output)
    std::cout << out.dump(2) << "\n";
  else
    for (auto it = out.begin(); it != out.end(); ++it)
      std::cout << it.key() << ": " << it.value().dump() << "\n";
  return 0;
}

}  // namespace cassm
