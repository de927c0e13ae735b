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

#include "cassm/model_io.hpp"

#include <fstream>
#include <stdexcept>

namespace cassm {

using nlohmann::json;

json matrix_to_json(const Eigen::MatrixXd& M) {
  json rows = json::array();
  for (long i = 0; i < M.rows(); ++i) {
    json row = json::array();
    for (long j = 0; j < M.cols(); ++j) row.push_back(M(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const json& j) {
  const long rows = static_cast<long>(j.size());
  if (rows == 0) return Eigen::MatrixXd(0, 0);
  const long cols = static_cast<long>(j.at(0).size());
  Eigen::MatrixXd M(rows, cols);
  for (long i = 0; i < rows; ++i)
    for (long c = 0; c < cols; ++c) M(i, c) = j.at(i).at(c).get<double>();
  return M;
}

json vector_to_json(const Eigen::VectorXd& v) {
  json arr = json::array();
  for (long i = 0; i < v.size(); ++i) arr.push_back(v(i));
  return arr;
}

Eigen::VectorXd vector_from_json(const json& j) {
  Eigen::VectorXd v(j.size());
  for (long i = 0; i < v.size(); ++i) v(i) = j.at(i).get<double>();
  return v;
}

json to_json(const FeatureMapSpec& spec) {
  json j;
  j["kind"] = spec.kind_name();
  j["input_dim"] = spec.input_dim;
  if (spec.kind == FeatureMapSpec::Kind::polynomial) {
    j["degree_lo"] = spec.degree_lo;
    j["degree_hi"] = spec.degree_hi;
  } else {
    j["count"] = spec.rff_count;
    j["lengthscale"] = spec.rff_lengthscale;
    j["seed"] = spec.rff_seed;
    j["omega"] = matrix_to_json(spec.omega);
    j["bias"] = vector_to_json(spec.bias);
  }
  return j;
}

FeatureMapSpec feature_spec_from_json(const json& j) {
  FeatureMapSpec spec;
  spec.input_dim = j.at("input_dim").get<int>();
  if (j.at("kind").get<std::string>() == "polynomial") {
    spec.kind = FeatureMapSpec::Kind::polynomial;
    spec.degree_lo = j.at("degree_lo").get<int>();
    spec.degree_hi = j.at("degree_hi").get<int>();
  } else {
    spec.kind = FeatureMapSpec::Kind::rff;
    spec.rff_count = j.at("count").get<int>();
    spec.rff_lengthscale = j.at("lengthscale").get<double>();
    spec.rff_seed = j.at("seed").get<std::uint64_t>();
    spec.omega = matrix_from_json(j.at("omega"));
    spec.bias = vector_from_json(j.at("bias"));
  }
  return spec;
}

json to_json(const Normalization& norm) {
  json j;
  j["center"] = vector_to_json(norm.center);
  j["scale"] = vector_to_json(norm.scale);
  return j;
}

Normalization normalization_from_json(const json& j) {
  Normalization norm;
  norm.center = vector_from_json(j.at("center"));
  norm.scale = vector_from_json(j.at("scale"));
  return norm;
}

json to_json(const ManifoldModel& model) {
  json j;
  j["version"] = "cassm-model/1";
  j["dims"] = {{"o", model.dims.o}, {"m", model.dims.m}, {"L", model.dims.L}, {"n", model.dims.n}};
  j["V"] = matrix_to_json(model.V);
  j["w_spec"] = to_json(model.w_spec);
  j["W_nl"] = matrix_to_json(model.W_nl);
  j["R0"] = matrix_to_json(model.R0);
  j["r_spec"] = to_json(model.r_spec);
  j["theta_r"] = matrix_to_json(model.theta_r);
  j["J0"] = matrix_to_json(model.J0);
  j["Lambda"] = matrix_to_json(model.Lambda);
  j["normalization"] = to_json(model.norm);
  j["ref_mode"] = model.ref_mode == RefMode::exact ? "exact" : "approx";
  j["dt_train"] = model.dt_train;
  return j;
}

ManifoldModel manifold_from_json(const json& j) {
  if (j.at("version").get<std::string>() != "cassm-model/1")
    throw std::runtime_error("manifold_from_json: unexpected version tag");
  ManifoldModel model;
  model.dims.o = j.at("dims").at("o").get<int>();
  model.dims.m = j.at("dims").at("m").get<int>();
  model.dims.L = j.at("dims").at("L").get<int>();
  model.dims.n = j.at("dims").at("n").get<int>();
  model.V = matrix_from_json(j.at("V"));
  model.w_spec = feature_spec_from_json(j.at("w_spec"));
  model.W_nl = matrix_from_json(j.at("W_nl"));
  model.R0 = matrix_from_json(j.at("R0"));
  model.r_spec = feature_spec_from_json(j.at("r_spec"));
  model.theta_r = matrix_from_json(j.at("theta_r"));
  model.J0 = matrix_from_json(j.at("J0"));
  model.Lambda = matrix_from_json(j.at("Lambda"));
  model.norm = normalization_from_json(j.at("normalization"));
  model.ref_mode = j.at("ref_mode").get<std::string>() == "exact" ? RefMode::exact : RefMode::approx;
  model.dt_train = j.at("dt_train").get<double>();
  return model;
}

json to_json(const OssmModel& model) {
  json j;
  j["version"] = "ossm/1";
  j["dims"] = {{"o", model.o}, {"m", model.m}, {"L", model.L}, {"n", model.n}};
  j["V"] = matrix_to_json(model.V);
  j["w_spec"] = to_json(model.w_spec);
  j["W_nl"] = matrix_to_json(model.W_nl);
  j["R0"] = matrix_to_json(model.R0);
  j["r_spec"] = to_json(model.r_spec);
  j["R_nl"] = matrix_to_json(model.R_nl);
  j["B_r"] = matrix_to_json(model.B_r);
  j["normalization"] = to_json(model.norm);
  j["dt_train"] = model.dt_train;
  j["train_max_state"] = model.train_max_state;
  return j;
}

OssmModel ossm_from_json(const json& j) {
  if (j.at("version").get<std::string>() != "ossm/1")
    throw std::runtime_error("ossm_from_json: unexpected version tag");
  OssmModel model;
  model.o = j.at("dims").at("o").get<int>();
  model.m = j.at("dims").at("m").get<int>();
  model.L = j.at("dims").at("L").get<int>();
  model.n = j.at("dims").at("n").get<int>();
  model.V = matrix_from_json(j.at("V"));
  model.w_spec = feature_spec_from_json(j.at("w_spec"));
  model.W_nl = matrix_from_json(j.at("W_nl"));
  model.R0 = matrix_from_json(j.at("R0"));
  model.r_spec = feature_spec_from_json(j.at("r_spec"));
  model.R_nl = matrix_from_json(j.at("R_nl"));
  model.B_r = matrix_from_json(j.at("B_r"));
  model.norm = normalization_from_json(j.at("normalization"));
  model.dt_train = j.at("dt_train").get<double>();
  model.train_max_state = j.at("train_max_state").get<double>();
  return model;
}

json to_json(const KoopmanModel& model) {
  json j;
  j["version"] = "koopman/1";
  j["o"] = model.o;
  j["m"] = model.m;
  j["delays"] = model.delays;
  j["degree"] = model.degree;
  j["A_d"] = matrix_to_json(model.A_d);
  j["B_d"] = matrix_to_json(model.B_d);
  j["normalization"] = to_json(model.norm);
  j["dt"] = model.dt;
  j["lifted_dim"] = model.lifted_dim;
  j["spectral_radius"] = model.spectral_radius;
  j["train_max_state"] = model.train_max_state;
  return j;
}

KoopmanModel koopman_from_json(const json& j) {
  if (j.at("version").get<std::string>() != "koopman/1")
    throw std::runtime_error("koopman_from_json: unexpected version tag");
  KoopmanModel model;
  model.o = j.at("o").get<int>();
  model.m = j.at("m").get<int>();
  model.delays = j.at("delays").get<int>();
  model.degree = j.at("degree").get<int>();
  model.A_d = matrix_from_json(j.at("A_d"));
  model.B_d = matrix_from_json(j.at("B_d"));
  model.norm = normalization_from_json(j.at("normalization"));
  model.dt = j.at("dt").get<double>();
  model.lifted_dim = j.at("lifted_dim").get<int>();
  model.spectral_radius = j.at("spectral_radius").get<double>();
  model.train_max_state = j.at("train_max_state").get<double>();
  return model;
}

void save_json(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_json: cannot open " + path);
  out << j.dump(2) << "\n";
}

json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_json: cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw std::runtime_error("load_json: parse error in " + path + ": " + e.what());
  }
  return j;
}

std::string model_kind(const json& j) {
  if (!j.contains("version") || !j.at("version").is_string())
    throw std::runtime_error("model file has no version tag");
  const std::string v = j.at("version").get<std::string>();
  if (v != "cassm-model/1" && v != "ossm/1" && v != "koopman/1")
    throw std::runtime_error("unknown model schema: " + v);
  return v;
}

}  // namespace cassm
