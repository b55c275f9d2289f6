#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "dualmim/trainer.hpp"

namespace dualmim {

/// Flat key=value settings with dotted namespaces ("model.depth=2").
using ConfigMap = std::map<std::string, std::string>;

/// Parses key=value lines. Blank lines and lines starting with '#' are
/// ignored; anything else without '=' is an error.
ConfigMap parse_config(const std::string& text, const std::string& origin = "config");
ConfigMap read_config_file(const std::filesystem::path& file);

/// Parses "key=value" as given on the command line.
std::pair<std::string, std::string> parse_override(const std::string& text);

std::string format_config(const ConfigMap& map);

/// Every key understood by apply_config, in a stable order.
const std::vector<std::string>& config_keys();

/// Applies settings to cfg and sizes the augmentation output to
/// model.image_size. Unknown keys or unparsable values throw.
void apply_config(TrainConfig& cfg, const ConfigMap& map);

/// All settings of cfg; apply_config(TrainConfig{}, to_config_map(c)) == c.
ConfigMap to_config_map(const TrainConfig& cfg);

}  // namespace dualmim
