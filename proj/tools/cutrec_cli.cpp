// cutrec: ingest, synth, train-target, train-transfer, evaluate, experiment.
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "cutrec/checkpoint.hpp"
#include "cutrec/config.hpp"
#include "cutrec/cut.hpp"
#include "cutrec/eval.hpp"
#include "cutrec/experiment.hpp"
#include "cutrec/synthgen.hpp"

namespace fs = std::filesystem;
using namespace cutrec;

namespace {

struct Globals {
  std::optional<fs::path> config;
  std::optional<std::uint64_t> seed;
  std::optional<fs::path> out;
  bool force = false;
};

// Exit code 1.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void info(const std::string& s) { std::cerr << s << '\n'; }

ExperimentConfig load_config(const Globals& g, bool require_data) {
  ExperimentConfig cfg;
  if (g.config) {
    if (!fs::exists(*g.config)) throw UsageError("config file not found: " + g.config->string());
    cfg = load_experiment_config(*g.config, require_data);
  } else if (require_data) {
    throw UsageError("--config is required");
  }
  if (g.seed) {
    cfg.seeds = {*g.seed};
    cfg.training.seed = *g.seed;
    if (cfg.data.synth) cfg.data.synth->seed = *g.seed;
  }
  return cfg;
}

fs::path out_dir(const Globals& g, const ExperimentConfig& cfg) {
  if (g.out) return *g.out;
  if (cfg.out_dir) return *cfg.out_dir;
  throw UsageError("--out is required");
}

std::vector<fs::path> with_config(const Globals& g, std::vector<fs::path> inputs) {
  if (g.config) inputs.push_back(fs::absolute(*g.config));
  return inputs;
}

std::vector<fs::path> archive_files(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const char* f : {"source.tsv", "target.tsv", "index.json", "splits.json"})
    out.push_back(fs::absolute(dir / f));
  return out;
}

void write_log(const fs::path& path, const TrainLog& log) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : log.epochs)
    epochs.push_back({{"epoch", e.epoch},
                      {"loss_target", e.mean_loss.target},
                      {"loss_source", e.mean_loss.source},
                      {"loss_contrastive", e.mean_loss.contrastive},
                      {"loss_total", e.mean_loss.total},
                      {"valid_ndcg", e.valid_ndcg}});
  write_text(path, nlohmann::json{{"best_epoch", log.best_epoch},
                                  {"best_valid_ndcg", log.best_valid_ndcg},
                                  {"steps", log.steps},
                                  {"epochs", epochs}}
                       .dump(2) +
                       "\n");
}

EpochCallback progress(const std::string& phase) {
  return [phase](const EpochLog& e) {
    info(phase + " epoch " + std::to_string(e.epoch) + " loss " +
         std::to_string(e.mean_loss.total) + " valid_ndcg " + std::to_string(e.valid_ndcg));
  };
}

int cmd_ingest(const Globals& g, const fs::path& source, const fs::path& target,
               std::size_t min_count, const std::string& order) {
  ExperimentConfig cfg = load_config(g, false);
  const fs::path out = out_dir(g, cfg);
  for (const auto& p : {source, target})
    if (!fs::exists(p)) throw UsageError("input file not found: " + p.string());
  DataSource src;
  src.source_path = source;
  src.target_path = target;
  src.min_count = min_count;
  if (order == "chronological") cfg.split_order = SplitOrder::Chronological;
  else if (order == "random") cfg.split_order = SplitOrder::Random;
  else if (order == "auto") cfg.split_order = SplitOrder::Auto;
  else throw UsageError("--split-order must be auto, chronological or random");
  prepare_out_dir(out, g.force);
  PreparedData data = prepare_data(src);
  if (!data.warning.empty()) info("warning: " + data.warning);
  const std::uint64_t seed = g.seed.value_or(0);
  DatasetArchive archive{data.dataset, split_source(data.dataset, cfg.ratios, seed, cfg.split_order),
                         split_target(data.dataset, cfg.ratios, seed, cfg.split_order)};
  save_archive(archive, data.source, data.target, out);
  write_manifest(out, with_config(g, data.inputs));
  const auto& ds = data.dataset;
  std::cout << "users: target_only=" << ds.n_target_only << " overlap=" << ds.n_overlap
            << " source_only=" << ds.n_source_only << "\nitems: source=" << ds.n_source_items()
            << " target=" << ds.n_target_items() << "\ninteractions: source="
            << data.source.records.size() << " target=" << data.target.records.size() << '\n';
  return 0;
}

int cmd_synth(const Globals& g) {
  ExperimentConfig cfg = load_config(g, true);
  if (!cfg.data.synth) throw ConfigError("data.synth", "synth command needs a synth section");
  const fs::path out = out_dir(g, cfg);
  prepare_out_dir(out, g.force);
  auto [source, target] = generate(*cfg.data.synth);
  write_interactions(source, out / "source.tsv");
  write_interactions(target, out / "target.tsv");
  write_text(out / "synth.json", synth_config_to_json(*cfg.data.synth).dump(2) + "\n");
  write_manifest(out, with_config(g, {}));
  std::cout << "wrote " << source.records.size() << " source and " << target.records.size()
            << " target interactions to " << out.string() << '\n';
  return 0;
}

int cmd_train_target(const Globals& g, const fs::path& data_dir) {
  ExperimentConfig cfg = load_config(g, false);
  const fs::path out = out_dir(g, cfg);
  DatasetArchive a = load_archive(data_dir);
  prepare_out_dir(out, g.force);
  auto res = run_target_phase(a.dataset, a.target_split, cfg.training, progress("target"));
  write_checkpoint(res.to_checkpoint(cfg.training), out / "target.ckpt");
  write_log(out / "train_log.json", res.log);
  write_manifest(out, with_config(g, archive_files(data_dir)));
  std::cout << "best epoch " << res.log.best_epoch << " valid ndcg " << res.log.best_valid_ndcg
            << '\n';
  return 0;
}

int cmd_train_transfer(const Globals& g, const fs::path& data_dir,
                       const std::optional<fs::path>& target_ckpt, const std::string& variant) {
  ExperimentConfig cfg = load_config(g, false);
  const fs::path out = out_dir(g, cfg);
  Variant v = Variant::Cut;
  try {
    v = variant_from_string(variant);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (v == Variant::TargetOnly) throw UsageError("target_only has no TRANSFER phase");
  TrainingConfig tc = cfg.training;
  tc.ablation = {};
  tc.ablation.joint_training_baseline = v == Variant::Joint;
  tc.ablation.no_transform = v == Variant::NoTransform;
  tc.ablation.no_contrastive = v == Variant::NoContrastive;
  tc.ablation.history_similarity = v == Variant::HistorySimilarity;
  DatasetArchive a = load_archive(data_dir);
  std::optional<TargetPhaseResult> phase1;
  std::vector<fs::path> inputs = archive_files(data_dir);
  if (target_ckpt) {
    if (!fs::exists(*target_ckpt)) throw UsageError("checkpoint not found: " + target_ckpt->string());
    phase1 = target_phase_from_checkpoint(read_checkpoint(*target_ckpt), a.target_split, tc);
    inputs.push_back(fs::absolute(*target_ckpt));
  } else if (tc.effective_lambda() > 0.0 && !tc.ablation.history_similarity) {
    throw UsageError("--target-ckpt is required for variant " + variant);
  }
  std::optional<SimilarityOracle> history;
  const SimilarityOracle* oracle = nullptr;
  if (tc.effective_lambda() > 0.0) {
    if (tc.ablation.history_similarity) {
      history = SimilarityOracle::from_history(a.target_split.train, tc.gamma);
      oracle = &*history;
    } else {
      oracle = &phase1->oracle;
    }
  }
  prepare_out_dir(out, g.force);
  auto res = run_transfer_phase(a.dataset, a.source_split, a.target_split, tc, oracle,
                                phase1 ? &phase1->model : nullptr, progress("transfer"));
  write_checkpoint(res.model.to_checkpoint(), out / "transfer.ckpt");
  write_log(out / "train_log.json", res.log);
  write_manifest(out, with_config(g, inputs));
  std::cout << "best epoch " << res.log.best_epoch << " valid ndcg " << res.log.best_valid_ndcg
            << '\n';
  return 0;
}

int cmd_evaluate(const Globals& g, const fs::path& data_dir, const fs::path& ckpt_path,
                 std::size_t k, bool no_mask, bool on_valid) {
  if (!fs::exists(ckpt_path)) throw UsageError("checkpoint not found: " + ckpt_path.string());
  DatasetArchive a = load_archive(data_dir);
  Checkpoint ckpt = read_checkpoint(ckpt_path);
  TrainingConfig tc;
  if (ckpt.meta.contains("hyperparameters"))
    tc = training_config_from_json(ckpt.meta["hyperparameters"], {}, "checkpoint.hyperparameters");
  ScoringSnapshot snap;
  const std::string phase = ckpt.meta.value("phase", "");
  if (phase == "target") {
    snap = target_phase_from_checkpoint(ckpt, a.target_split, tc).model.snapshot();
  } else if (phase == "transfer") {
    CutModel m(a.dataset, a.source_split, a.target_split, tc);
    m.load_checkpoint(ckpt);
    snap = m.target_snapshot();
  } else {
    throw std::runtime_error("checkpoint has unknown phase '" + phase + "'");
  }
  EvalOptions opt;
  opt.k = k;
  opt.mask_seen = !no_mask;
  opt.target = on_valid ? EvalTarget::Valid : EvalTarget::Test;
  MetricsReport r = evaluate_full(snap, a.target_split, opt);
  std::cout << r.to_text();
  if (g.out) {
    prepare_out_dir(*g.out, g.force);
    write_text(*g.out / "metrics.json", r.to_json().dump(2) + "\n");
    write_text(*g.out / "metrics.txt", r.to_text());
    auto inputs = archive_files(data_dir);
    inputs.push_back(fs::absolute(ckpt_path));
    write_manifest(*g.out, inputs);
  }
  return 0;
}

int cmd_experiment(const Globals& g, unsigned parallel) {
  ExperimentConfig cfg = load_config(g, true);
  ExperimentOptions opt;
  opt.out_dir = out_dir(g, cfg);
  opt.force = g.force;
  opt.parallel_seeds = parallel;
  opt.config_path = g.config;
  run_experiment(cfg, opt, info);
  std::ifstream report(opt.out_dir / "report.txt");
  std::cout << report.rdbuf();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-domain recommendation with a user transformation layer"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  std::string config_s, out_s;
  std::uint64_t seed = 0;
  auto* config_opt = app.add_option("--config", config_s, "JSON config file");
  auto* seed_opt = app.add_option("--seed", seed, "Override the seed");
  auto* out_opt = app.add_option("--out", out_s, "Output directory");
  app.add_flag("--force", g.force, "Overwrite a non-empty output directory");

  auto* ingest = app.add_subcommand("ingest", "Build a dataset archive from two TSV files");
  std::string source_s, target_s, order = "auto";
  std::size_t min_count = 5;
  ingest->add_option("--source", source_s, "Source-domain TSV")->required();
  ingest->add_option("--target", target_s, "Target-domain TSV")->required();
  ingest->add_option("--min-count", min_count, "k-core threshold")->capture_default_str();
  ingest->add_option("--split-order", order, "auto, chronological or random")->capture_default_str();

  auto* synth = app.add_subcommand("synth", "Generate a synthetic paired-domain dataset");

  std::string data_s, ckpt_s, target_ckpt_s, variant = "cut";
  auto* train_target = app.add_subcommand("train-target", "TARGET phase on a dataset archive");
  train_target->add_option("--data", data_s, "Dataset archive directory")->required();

  auto* train_transfer = app.add_subcommand("train-transfer", "TRANSFER phase on a dataset archive");
  train_transfer->add_option("--data", data_s, "Dataset archive directory")->required();
  train_transfer->add_option("--target-ckpt", target_ckpt_s, "TARGET-phase checkpoint");
  train_transfer->add_option("--variant", variant,
                             "cut, joint, no_transform, no_contrastive, history_similarity")
      ->capture_default_str();

  auto* evaluate = app.add_subcommand("evaluate", "Evaluate a checkpoint on target TEST");
  std::size_t k = 10;
  bool no_mask = false, on_valid = false;
  evaluate->add_option("--data", data_s, "Dataset archive directory")->required();
  evaluate->add_option("--checkpoint", ckpt_s, "Checkpoint file")->required();
  evaluate->add_option("-k,--k", k, "Cutoff")->capture_default_str();
  evaluate->add_flag("--no-mask", no_mask, "Do not mask train/valid items");
  evaluate->add_flag("--valid", on_valid, "Evaluate on VALID instead of TEST");

  auto* experiment = app.add_subcommand("experiment", "Full pipeline over all seeds and variants");
  unsigned parallel = 1;
  experiment->add_option("--parallel-seeds", parallel, "Worker threads over seeds")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }
  if (*config_opt) g.config = config_s;
  if (*seed_opt) g.seed = seed;
  if (*out_opt) g.out = out_s;

  try {
    if (*ingest) return cmd_ingest(g, source_s, target_s, min_count, order);
    if (*synth) return cmd_synth(g);
    if (*train_target) return cmd_train_target(g, data_s);
    if (*train_transfer)
      return cmd_train_transfer(g, data_s,
                                target_ckpt_s.empty() ? std::nullopt
                                                      : std::optional<fs::path>(target_ckpt_s),
                                variant);
    if (*evaluate) return cmd_evaluate(g, data_s, ckpt_s, k, no_mask, on_valid);
    if (*experiment) return cmd_experiment(g, parallel);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const OutputExistsError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
