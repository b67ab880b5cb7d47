#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "lilac/backbone.hpp"
#include "lilac/eval.hpp"
#include "lilac/synthetic.hpp"
#include "lilac/trainer.hpp"

namespace lilac {

// Everything a CLI run depends on. [train] drives adaptor training; keys in
// [train.backbone] override it for backbone pre-training.
struct AppConfig {
  BackboneConfig backbone;
  TrainConfig train;
  TrainConfig backbone_train;
  DataConfig data;
  EvalConfig eval;

  void validate() const;
};

// Desk-scale defaults.
AppConfig default_config();

// TOML with sections [backbone], [train], [train.backbone], [data], [eval].
// Unknown keys are a ConfigError.
AppConfig parse_config(const std::string& toml_text, const std::string& source = "<string>");
AppConfig load_config(const std::filesystem::path& path);

// Codec and dataset splits derived from [data]; the test split uses its own seed stream.
LatentCodec make_codec(const AppConfig& config);
std::vector<SyntheticSample> train_split(const AppConfig& config);
std::vector<SyntheticSample> test_split(const AppConfig& config);

nlohmann::json to_json(const AppConfig& config);
// SHA-256 of the canonical JSON form; independent of key order and formatting in the file.
std::string config_digest(const AppConfig& config);

}  // namespace lilac
