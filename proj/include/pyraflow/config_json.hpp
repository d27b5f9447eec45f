#pragma once

#include <json.hpp>

#include "pyraflow/pyramid.hpp"
#include "pyraflow/synth.hpp"
#include "pyraflow/train.hpp"

namespace pyraflow {

// JSON schema used by both the CLI config file and the dataset manifest.
// Parsers reject unknown keys at every nesting level; every field has a
// default, so {} is a valid document.
nlohmann::json gen_config_to_json(const GenConfig& c);
GenConfig gen_config_from_json(const nlohmann::json& j);

nlohmann::json model_config_to_json(const PyramidConfig& c);
PyramidConfig model_config_from_json(const nlohmann::json& j);

nlohmann::json train_config_to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

// Throws ConfigError on any key of j outside `allowed`; `where` names the
// object in the message.
void reject_unknown_keys(const nlohmann::json& j,
                         std::initializer_list<const char*> allowed,
                         const std::string& where);

}  // namespace pyraflow
