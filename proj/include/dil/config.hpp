#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dil/degradation.hpp"
#include "dil/metrics.hpp"
#include "dil/net.hpp"
#include "dil/optim.hpp"
#include "json.hpp"

namespace dil {

using Json = nlohmann::ordered_json;

enum class Task { kDenoise, kDeblur, kHybrid };
std::string task_name(Task t);
Task parse_task(const std::string& name);

struct DatasetConfig {
  enum class Kind { kProcedural, kDirectory } kind = Kind::kProcedural;
  std::size_t count = 40;       // procedural training images
  std::size_t eval_count = 10;  // procedural evaluation images
  std::size_t h = 96;
  std::size_t w = 96;
  std::uint64_t seed = 2024;
  /// Directory datasets: <path>/train/*.ppm and <path>/eval/*.ppm.
  std::filesystem::path path;
  bool operator==(const DatasetConfig&) const = default;
};

struct EvalConfig {
  Channel channel = Channel::kRgb;
  std::uint64_t seed = 77;
  bool operator==(const EvalConfig&) const = default;
};

struct ExperimentConfig {
  Task task = Task::kDenoise;
  std::vector<DistortionSpec> train_specs;
  std::vector<DistortionSpec> test_specs;
  NetConfig net;
  TrainConfig train;
  DatasetConfig dataset;
  EvalConfig eval;
  std::filesystem::path output_dir = "out";

  /// Throws on invalid values, including test specs that also appear in training.
  void validate() const;
  bool operator==(const ExperimentConfig&) const = default;
};

std::vector<DistortionSpec> default_train_specs(Task task);
std::vector<DistortionSpec> default_test_specs(Task task);
ExperimentConfig default_config(Task task = Task::kDenoise);

Json spec_to_json(const DistortionSpec& spec);
DistortionSpec spec_from_json(const Json& j);

Json config_to_json(const ExperimentConfig& c);
/// Missing keys take defaults (specs from the task); unknown keys are rejected.
ExperimentConfig config_from_json(const Json& j);

/// Applies "a.b.c=value"; the value is parsed as JSON, falling back to a string.
void apply_override(Json& doc, const std::string& assignment);

/// Reads an optional JSON file, applies overrides in order, parses and validates.
ExperimentConfig load_config(const std::filesystem::path& file, const std::vector<std::string>& overrides);

/// Network initialization seed of a run.
std::uint64_t init_seed(const ExperimentConfig& c);

}  // namespace dil
