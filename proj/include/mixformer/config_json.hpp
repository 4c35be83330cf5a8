#pragma once

#include <string>

#include "mixformer/backbone.hpp"
#include "mixformer/train.hpp"

namespace mixformer {

// JSON schemas for the CLI. Unknown keys are errors (fail fast), missing
// keys fall back to the defaults of the corresponding struct.
ModelConfig model_config_from_json_text(const std::string& text);
ModelConfig model_config_from_file(const std::string& path);

struct ToyRunConfig {
  ModelConfig model = ModelConfig::variant("micro");
  TrainConfig train;
  SyntheticDatasetConfig dataset;
};

ToyRunConfig toy_run_config_from_json_text(const std::string& text);
ToyRunConfig toy_run_config_from_file(const std::string& path);

}  // namespace mixformer
