#pragma once

#include <optional>
#include <string>

#include <json.hpp>

#include "keenkt/trainer.hpp"

namespace keenkt {

// JSON workflow configuration shared by every CLI command. Sections and
// keys are all optional (defaults apply); unknown keys are rejected.
// Ablation switches are deliberately command-line flags, not config keys.
struct CliConfig {
  TrainConfig train;
  SimulatorConfig sim;
  std::optional<std::string> data_path;  // "data"
  std::optional<std::string> out_path;   // "out"
};

// Throws ConfigError naming the offending key; validates ranges.
CliConfig parse_cli_config(const nlohmann::json& j);
CliConfig load_cli_config(const std::string& path);

}  // namespace keenkt
