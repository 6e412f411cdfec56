#pragma once

#include <filesystem>
#include <string>

#include "wsds/network.hpp"
#include "wsds/trainer.hpp"

namespace wsds {

/// Everything a training or inference command needs.
struct RunConfig {
  SgdConfig sgd;
  StagePlan plan;
  ModelConfig model;

  void validate() const;
};

/// Flat JSON object. Recognized keys:
///   learning_rate momentum weight_decay batch_size lr_decay
///   epochs alpha beta1 beta2 seed height width
///   hidden_dim heads points ffn_dim dropout encoder_layers
///   backbone_channels ([3] coarse to fine) stem_channels use_dten
/// Missing keys keep the values already in `base`. Unknown keys or values
/// of the wrong type throw ConfigError; malformed JSON throws FormatError.
RunConfig parse_run_config(const std::string& json_text, RunConfig base = {});
RunConfig load_run_config(const std::filesystem::path& path, RunConfig base = {});

/// Writes every key, so the file reproduces `config` exactly.
std::string run_config_json(const RunConfig& config);
void save_run_config(const RunConfig& config, const std::filesystem::path& path);

}  // namespace wsds
