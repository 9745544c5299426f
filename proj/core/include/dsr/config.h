#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "dsr/dsrnet.h"
#include "dsr/synthgen.h"
#include "dsr/trainer.h"

namespace dsr::cfg {

// Every tunable with its default; the echo written next to run outputs.
nlohmann::json default_config();

// Named size presets ("default", "toy", "micro") as patches over the defaults.
nlohmann::json preset_patch(const std::string& name);

// defaults <- preset <- file <- dotted key=value overrides.
// Unknown keys anywhere raise ConfigError.
nlohmann::json resolve(const std::string& config_path,
                       const std::vector<std::string>& overrides);

net::ModelConfig model_config(const nlohmann::json& root, bool student);
train::TrainConfig train_config(const nlohmann::json& root);
synth::SynthConfig synth_config(const nlohmann::json& root);

}  // namespace dsr::cfg
