#pragma once

#include "conml/eval/eval.hpp"
#include "conml/training/training.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace conml {

/// Invalid configuration; what() starts with the offending field path.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(const std::string& path, const std::string& what)
      : std::invalid_argument(path + ": " + what), path_(path) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

struct EvalSection {
  TestConfig test;
  /// Shots for the headline MSE.
  int shots = 5;
  std::vector<double> deltas{0.0, 1.0, 2.0, 3.0};
  std::vector<int> shot_list{5, 10, 20};
  ClusterEvalConfig cluster;
  DistanceEvalConfig distances;
};

struct ExperimentConfig {
  LearnerConfig learner;
  TaskDistributionConfig tasks;
  /// contrastive.enabled; the rest of the section is ignored when off.
  bool contrastive_enabled = false;
  ContrastiveConfig contrastive;
  EpisodeConfig training;
  EvalSection eval;
  std::uint64_t seed = 0;
  /// Root under which runs/<hash>/ is created. Not part of the hash.
  std::string output_dir;

  void validate() const;
  TrainingSpec training_spec() const;
};

/// Strict parse: unknown keys and type mismatches raise ConfigError naming
/// the field path. Missing keys keep their defaults.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Every field that can change a result. Inactive learner and task sections
/// and a disabled contrastive section are omitted, as are output_dir and
/// eval.test.jobs.
nlohmann::json semantic_json(const ExperimentConfig& cfg);
/// semantic_json plus the non-semantic fields; parses back to `cfg`.
nlohmann::json to_json(const ExperimentConfig& cfg);

/// 64-bit FNV-1a of the compact dump of a JSON value.
std::uint64_t fnv1a64(const std::string& bytes);
/// Hex FNV-1a of semantic_json.
std::string config_hash(const ExperimentConfig& cfg);

}  // namespace conml
