#pragma once

#include <cstddef>
#include <string>

#include <json.hpp>

#include "charlm/model.hpp"
#include "charlm/training.hpp"

namespace charlm {

struct DataConfig {
  std::string train;
  std::string valid;
  std::string test;
  std::string morph_table;
  std::size_t vocab_cap = 0;  // 0: no cap
  std::size_t min_count = 1;

  bool operator==(const DataConfig&) const = default;
};

struct AnalysisConfig {
  std::size_t ngram_min_len = 2;
  std::size_t ngram_max_len = 7;
  std::size_t ngram_min_support = 2;
  std::size_t neighbors = 5;

  bool operator==(const AnalysisConfig&) const = default;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
  AnalysisConfig analysis;
  std::string checkpoint = "model.ckpt";
  std::string log;  // empty: <checkpoint>.log

  bool operator==(const RunConfig&) const = default;
};

/// Builds the effective configuration. Settings are flat key/value pairs;
/// `overrides` (from command-line flags) win over `file`, which wins over the
/// preset chosen by the "input" and "preset" keys. Unknown keys and values of
/// the wrong type throw ConfigError.
RunConfig resolve_config(const nlohmann::json& file, const nlohmann::json& overrides = nlohmann::json::object());

/// Reads a JSON object from disk. Throws ConfigError.
nlohmann::json load_config_file(const std::string& path);

/// Every key of a RunConfig, as accepted by resolve_config.
nlohmann::json config_to_json(const RunConfig& config);

nlohmann::json model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json train_config_to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j);

}  // namespace charlm
