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

#ifndef CASSM_MODEL_IO_HPP
#define CASSM_MODEL_IO_HPP

#include <json.hpp>

#include <string>

#include "cassm/baselines.hpp"
#include "cassm/manifold.hpp"

namespace cassm {

nlohmann::json matrix_to_json(const Eigen::MatrixXd& M);
Eigen::MatrixXd matrix_from_json(const nlohmann::json& j);
nlohmann::json vector_to_json(const Eigen::VectorXd& v);
Eigen::VectorXd vector_from_json(const nlohmann::json& j);

nlohmann::json to_json(const FeatureMapSpec& spec);
FeatureMapSpec feature_spec_from_json(const nlohmann::json& j);

nlohmann::json to_json(const Normalization& norm);
Normalization normalization_from_json(const nlohmann::json& j);

/// Version tag "cassm-model/1"; dense matrices stored row-major as nested
/// arrays, frozen RFF samples serialized verbatim.
nlohmann::json to_json(const ManifoldModel& model);
ManifoldModel manifold_from_json(const nlohmann::json& j);

/// Version tag "ossm/1".
nlohmann::json to_json(const OssmModel& model);
OssmModel ossm_from_json(const nlohmann::json& j);

/// Version tag "koopman/1".
nlohmann::json to_json(const KoopmanModel& model);
KoopmanModel koopman_from_json(const nlohmann::json& j);

void save_json(const std::string& path, const nlohmann::json& j);
nlohmann::json load_json(const std::string& path);

/// Reads the version tag of a model file ("cassm-model/1", "ossm/1",
/// "koopman/1"); throws std::runtime_error on a corrupt or unknown schema.
std::string model_kind(const nlohmann::json& j);

}  // namespace cassm

#endif  // CASSM_MODEL_IO_HPP
