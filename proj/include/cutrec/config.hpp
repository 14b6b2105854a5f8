#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cutrec/corpus.hpp"
#include "cutrec/cut.hpp"
#include "cutrec/synthgen.hpp"
#include "json.hpp"

namespace cutrec {

// A configuration value failed validation; `key` is the dotted path.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& why);
  const std::string& key() const { return key_; }
  const std::string& why() const { return why_; }

 private:
  std::string key_;
  std::string why_;
};

enum class Variant {
  TargetOnly,
  Joint,
  Cut,
  NoTransform,
  NoContrastive,
  HistorySimilarity,
};

std::string_view to_string(Variant v);
Variant variant_from_string(std::string_view s);

struct DataSource {
  // Either both TSV paths or a synthetic generator config.
  std::optional<std::filesystem::path> source_path;
  std::optional<std::filesystem::path> target_path;
  std::optional<SynthConfig> synth;
  std::size_t min_count = 5;  // k-core threshold for file inputs
};

struct ExperimentConfig {
  std::string preset;  // "", "amazon-like", "douban-like"
  DataSource data;
  SplitRatios ratios;
  SplitOrder split_order = SplitOrder::Auto;
  TrainingConfig training;
  EvalOptions eval;
  std::vector<std::uint64_t> seeds{0};
  std::vector<Variant> variants{Variant::TargetOnly, Variant::Joint, Variant::Cut,
                                Variant::NoTransform, Variant::NoContrastive};
  // Retained fractions of target TRAIN; {1.0} means no sweep.
  std::vector<double> sparsity{1.0};
  std::optional<std::filesystem::path> out_dir;

  // `require_data` is false for commands that take a dataset archive.
  void validate(bool require_data = true) const;
};

// Applies a named preset's loss, lambda and weight decay.
void apply_preset(TrainingConfig& cfg, const std::string& name);

nlohmann::json training_config_to_json(const TrainingConfig& cfg);
// Overrides fields of `base`; unknown keys throw ConfigError.
TrainingConfig training_config_from_json(const nlohmann::json& j, TrainingConfig base = {},
                                         const std::string& prefix = "training");

nlohmann::json synth_config_to_json(const SynthConfig& cfg);
SynthConfig synth_config_from_json(const nlohmann::json& j, SynthConfig base = {},
                                   const std::string& prefix = "synth");

nlohmann::json experiment_config_to_json(const ExperimentConfig& cfg);
// Relative data paths resolve against `base_dir`.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j,
                                             const std::filesystem::path& base_dir = {},
                                             bool require_data = true);
ExperimentConfig load_experiment_config(const std::filesystem::path& path,
                                        bool require_data = true);

}  // namespace cutrec
