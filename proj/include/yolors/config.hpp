#pragma once

#include <map>
#include <string>

#include <json.hpp>

#include "yolors/detector.hpp"

namespace yolors {

// Flat structured text: `key = value` lines under optional `[section]`
// headers; '#' starts a comment. Keys are returned as "section.key".
std::map<std::string, std::string> parse_config_file(const std::string& path);

nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

// Default output directory: $YOLORS_OUT when set, else "out".
std::string default_out_dir();

}  // namespace yolors
