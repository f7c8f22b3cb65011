#pragma once

#include "specenc/encoders.hpp"
#include "specenc/models.hpp"
#include "specenc/spectrum.hpp"
#include "specenc/train.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>

// JSON mappings for configs and results. Readers fill unspecified fields with
// defaults and reject unknown keys and wrongly typed values with
// ValidationError.
namespace specenc {

using Json = nlohmann::json;

Json to_json(const models::ModelConfig& cfg);
models::ModelConfig model_config_from_json(const Json& j);

Json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const Json& j);

Json to_json(const RepresentationConfig& cfg);
RepresentationConfig representation_config_from_json(const Json& j);

Json to_json(const SyntheticConfig& cfg);
SyntheticConfig synthetic_config_from_json(const Json& j);

Json to_json(const RegressionMetrics& m);
RegressionMetrics metrics_from_json(const Json& j);

Json to_json(const RunHistory& h, bool include_timing = true);
RunHistory run_history_from_json(const Json& j);

/// FNV-1a 64 of the compact dump, hex encoded. Object keys are sorted by the
/// JSON library, so equal documents hash equally on every platform.
std::string config_hash(const Json& j);

}  // namespace specenc
