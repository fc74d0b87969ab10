#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "neq/data.hpp"
#include "neq/trainer.hpp"

namespace neq {

struct DatasetConfig {
  std::string source = "synthetic";  // "synthetic" or "idx"
  std::string synthetic_kind = "rings";
  std::int64_t n_samples = 2000;
  double noise = 0.02;
  int image_size = 12;
  std::uint64_t data_seed = 1234;
  std::string train_images, train_labels, test_images, test_labels;
  double heldout_fraction = 0.5;  // used when no separate test files exist
};

enum class Precision { float32, float64 };

struct TrainConfig {
  TrainSpec spec;  // spec.arch.input_shape is filled in from the dataset
  DatasetConfig dataset;
  std::string replay_path;
  std::string output_dir;
  Precision precision = Precision::float32;
  bool diagnostics = false;
  bool checkpoint = false;
  std::vector<std::string> warnings;
};

/// Every accepted key with its JSON type name ("integer", "number",
/// "boolean", "string", "integer list").
struct ConfigKey {
  std::string name;
  std::string type;
  std::string help;
};
const std::vector<ConfigKey>& config_keys();

/// Validates a flat JSON object: unknown keys, wrong types and out-of-range
/// values throw ConfigError naming the field. Missing keys take defaults.
TrainConfig config_from_json(const nlohmann::json& j);
TrainConfig parse_config(const std::filesystem::path& path);
/// The raw JSON object of a config file (IoError / ConfigError on failure).
nlohmann::json read_config_json(const std::filesystem::path& path);

/// Fully resolved configuration as sorted JSON (what a run actually used).
nlohmann::json resolved_json(const TrainConfig& config);

/// Converts a command-line string to the JSON value for `key`
/// (comma-separated for lists).
nlohmann::json parse_override(const std::string& key, const std::string& value);

/// Loads or generates the data and splits off the probe and test sets; sets
/// the model input shape and class count from the data.
DataSplit load_data(TrainConfig& config);

}  // namespace neq
