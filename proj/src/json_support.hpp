#pragma once

// JSON conversions shared by the config, checkpoint and command sources.
// Readers reject unknown keys so typos in config files surface early.

#include "drlabel/config.hpp"
#include "drlabel/errors.hpp"
#include "drlabel/model.hpp"
#include "drlabel/training.hpp"

#include <json.hpp>

#include <string>

namespace drlabel::json_support {

using nlohmann::json;

template <class Handler>
void read_fields(const json& j, const std::string& section, Handler&& handle) {
    if (!j.is_object()) throw ValidationError("'" + section + "' must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        if (!handle(key, value)) throw ValidationError("unknown key '" + key + "' in '" + section + "'");
    }
}

json matrix_to_json(const ad::Matrix& m);
ad::Matrix matrix_from_json(const json& j);

json to_json(const GraphPolicy& p);
GraphPolicy graph_policy_from_json(const json& j);

json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const json& j, ModelConfig base = {});

json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const json& j, TrainConfig base = {});

json to_json(const DatasetConfig& c);
DatasetConfig dataset_config_from_json(const json& j, DatasetConfig base = {});

json to_json(const SplitConfig& c);
SplitConfig split_config_from_json(const json& j, SplitConfig base = {});

json to_json(const Metrics& m);
Metrics metrics_from_json(const json& j);

json to_json(const EpochRecord& r);
EpochRecord epoch_record_from_json(const json& j);

json to_json(const ExperimentConfig& c);
ExperimentConfig experiment_config_from_json(const json& j);

}  // namespace drlabel::json_support
