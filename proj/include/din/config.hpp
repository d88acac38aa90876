#pragma once

#include <map>
#include <string>

#include "din/train.hpp"

namespace din {

// Flat key=value config files ('#' starts a comment). Every TrainConfig field
// is a key; CLI flags override file values.
std::map<std::string, std::string> parse_config_file(const std::string& path);

void apply_config_entry(TrainConfig& cfg, const std::string& key, const std::string& value);
TrainConfig config_from_file(const std::string& path, TrainConfig base = {});

}  // namespace din
