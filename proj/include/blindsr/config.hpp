#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "blindsr/training.hpp"

namespace blindsr {

// Raised for malformed or invalid configuration; the message starts with the
// offending key path, e.g. "train.batch_size: must be positive".
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct BenchmarkSettings {
  std::string ladder = "desk";  // desk | full
  int repeats = 20;
  int warmup = 3;
  bool operator==(const BenchmarkSettings&) const = default;
};

struct PathSettings {
  std::string out_dir = "runs";
  std::string hr_dir;
  bool operator==(const PathSettings&) const = default;
};

inline constexpr int kConfigSchemaVersion = 1;

// Top-level document:
//   { "schema_version", "train", "loss", "degradation", "generator",
//     "discriminator", "perceptual": {"vgg", "resnet"}, "benchmark", "paths" }
// Any key may be omitted and takes its default; unknown keys are rejected.
struct AppConfig {
  int schema_version = kConfigSchemaVersion;
  TrainConfig train;
  BenchmarkSettings benchmark;
  PathSettings paths;

  void validate() const;
  bool operator==(const AppConfig&) const = default;
};

nlohmann::json to_json(const AppConfig& cfg);
AppConfig app_config_from_json(const nlohmann::json& j);
// Throws ConfigError when the file is missing or malformed.
AppConfig load_app_config(const std::filesystem::path& path);

nlohmann::json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const GeneratorConfig& cfg);
GeneratorConfig generator_config_from_json(const nlohmann::json& j, const std::string& path = "generator");
nlohmann::json to_json(const DegradationSpace& space);
DegradationSpace degradation_space_from_json(const nlohmann::json& j, const std::string& path = "degradation");

}  // namespace blindsr
