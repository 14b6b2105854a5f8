#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "cutrec/config.hpp"
#include "cutrec/cut.hpp"
#include "cutrec/eval.hpp"
#include "json.hpp"

namespace cutrec {

// Output directory is not empty and --force was not given.
class OutputExistsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PreparedData {
  RawInteractions source;
  RawInteractions target;
  CrossDomainDataset dataset;
  std::string warning;
  // Input files (absolute) read to build the data.
  std::vector<std::filesystem::path> inputs;
};

// Loads + k-core filters TSVs, or runs the generator.
PreparedData prepare_data(const DataSource& src);

struct RunResult {
  Variant variant = Variant::Cut;
  double sparsity = 1.0;
  std::uint64_t seed = 0;
  MetricsReport report;
  TrainLog log;
};

using LogFn = std::function<void(const std::string&)>;

// All variants and sparsity levels of one seed. Splits, model init and
// sampling derive from `seed`.
std::vector<RunResult> run_seed(const PreparedData& data, const ExperimentConfig& cfg,
                                std::uint64_t seed, const LogFn& log = {});

// Runs every seed (`parallel` > 1 uses that many worker threads) and returns
// results ordered by seed, then sparsity, then variant.
std::vector<RunResult> run_all_seeds(const PreparedData& data, const ExperimentConfig& cfg,
                                     unsigned parallel = 1, const LogFn& log = {});

// {"K", "runs": [...], "aggregate": [...]}
nlohmann::json metrics_json(const std::vector<RunResult>& runs, const ExperimentConfig& cfg);
std::string metrics_text(const std::vector<RunResult>& runs, const ExperimentConfig& cfg);

// Creates `dir`; throws OutputExistsError if it holds files and !force.
void prepare_out_dir(const std::filesystem::path& dir, bool force);

// Writes manifest.json listing every file under `dir` (except itself) with
// its content hash, plus the hashes of `inputs`.
void write_manifest(const std::filesystem::path& dir,
                    const std::vector<std::filesystem::path>& inputs);

std::string file_hash(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

struct ExperimentOptions {
  std::filesystem::path out_dir;
  bool force = false;
  unsigned parallel_seeds = 1;
  // Config file, listed in the manifest when given.
  std::optional<std::filesystem::path> config_path;
};

// Full pipeline: data, every seed, per-run reports, aggregated metrics.json,
// report.txt, resolved config and manifest.
nlohmann::json run_experiment(const ExperimentConfig& cfg, const ExperimentOptions& opt,
                              const LogFn& log = {});

}  // namespace cutrec
