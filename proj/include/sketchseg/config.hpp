#pragma once

#include <string>

#include "sketchseg/encoder.hpp"
#include "sketchseg/training.hpp"

namespace sketchseg {

struct RunConfig {
  EncoderConfig encoder;
  TrainingConfig training;
};

// Flat `key = value` text format mirroring the EncoderConfig / TrainingConfig
// field names. Lines starting with '#' and blank lines are ignored. Unknown
// keys are configuration errors.
RunConfig parse_config_text(const std::string& text);
RunConfig load_config_file(const std::string& path);

std::string config_to_text(const RunConfig& config);

}  // namespace sketchseg
