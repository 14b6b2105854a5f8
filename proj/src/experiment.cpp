#include "cutrec/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include "cutrec/synthgen.hpp"

namespace cutrec {

namespace fs = std::filesystem;

PreparedData prepare_data(const DataSource& src) {
  PreparedData out;
  if (src.synth) {
    std::tie(out.source, out.target) = generate(*src.synth);
  } else {
    if (!src.source_path || !src.target_path) throw ConfigError("data", "missing TSV paths");
    for (const auto& p : {*src.source_path, *src.target_path})
      if (!fs::exists(p)) throw std::runtime_error("input file not found: " + p.string());
    out.source = filter_k_core(load_interactions(*src.source_path, Domain::Source), src.min_count);
    out.target = filter_k_core(load_interactions(*src.target_path, Domain::Target), src.min_count);
    out.inputs = {fs::absolute(*src.source_path), fs::absolute(*src.target_path)};
  }
  out.dataset = build_cross_domain(out.source, out.target, &out.warning);
  return out;
}

namespace {

bool needs_target_phase(const ExperimentConfig& cfg) {
  if (cfg.training.warm_start) return true;
  for (auto v : cfg.variants)
    if (v == Variant::TargetOnly || v == Variant::Cut || v == Variant::NoTransform) return true;
  return false;
}

TrainingConfig variant_config(TrainingConfig base, Variant v, std::uint64_t seed) {
  base.seed = seed;
  base.ablation = {};
  switch (v) {
    case Variant::Joint: base.ablation.joint_training_baseline = true; break;
    case Variant::NoTransform: base.ablation.no_transform = true; break;
    case Variant::NoContrastive: base.ablation.no_contrastive = true; break;
    case Variant::HistorySimilarity: base.ablation.history_similarity = true; break;
    default: break;
  }
  return base;
}

std::string fraction_label(double f) {
  std::ostringstream os;
  os << f;
  return os.str();
}

}  // namespace

std::vector<RunResult> run_seed(const PreparedData& data, const ExperimentConfig& cfg,
                                std::uint64_t seed, const LogFn& log) {
  const auto& ds = data.dataset;
  const SplitDataset target_full = split_target(ds, cfg.ratios, seed, cfg.split_order);
  const SplitDataset source_split = split_source(ds, cfg.ratios, seed, cfg.split_order);
  EvalOptions eval = cfg.eval;
  eval.target = EvalTarget::Test;

  std::vector<RunResult> out;
  for (double f : cfg.sparsity) {
    const SplitDataset ts = f < 1.0 ? subsample_target(target_full, f, seed) : target_full;
    std::optional<TargetPhaseResult> phase1;
    if (needs_target_phase(cfg)) {
      phase1 = run_target_phase(ds, ts, variant_config(cfg.training, Variant::Cut, seed));
      if (log)
        log("seed " + std::to_string(seed) + " sparsity " + fraction_label(f) +
            ": TARGET phase done, best epoch " + std::to_string(phase1->log.best_epoch));
    }
    for (auto v : cfg.variants) {
      RunResult r;
      r.variant = v;
      r.sparsity = f;
      r.seed = seed;
      if (v == Variant::TargetOnly) {
        r.report = evaluate_full(phase1->model.snapshot(), ts, eval);
        r.log = phase1->log;
      } else {
        const TrainingConfig tc = variant_config(cfg.training, v, seed);
        std::optional<SimilarityOracle> history;
        const SimilarityOracle* oracle = nullptr;
        if (tc.effective_lambda() > 0.0) {
          if (v == Variant::HistorySimilarity) {
            history = SimilarityOracle::from_history(ts.train, tc.gamma);
            oracle = &*history;
          } else {
            oracle = &phase1->oracle;
          }
        }
        auto res = run_transfer_phase(ds, source_split, ts, tc, oracle,
                                      phase1 ? &phase1->model : nullptr);
        r.report = evaluate_full(res.model.target_snapshot(), ts, eval);
        r.log = std::move(res.log);
      }
      r.report.seed = seed;
      if (log)
        log("seed " + std::to_string(seed) + " sparsity " + fraction_label(f) + " " +
            std::string(to_string(v)) + ": ndcg@" + std::to_string(eval.k) + "=" +
            std::to_string(r.report.mean("ndcg")));
      out.push_back(std::move(r));
    }
  }
  return out;
}

std::vector<RunResult> run_all_seeds(const PreparedData& data, const ExperimentConfig& cfg,
                                     unsigned parallel, const LogFn& log) {
  const std::size_t n = cfg.seeds.size();
  std::vector<std::vector<RunResult>> per_seed(n);
  std::mutex log_mutex;
  LogFn safe_log;
  if (log)
    safe_log = [&](const std::string& s) {
      std::lock_guard<std::mutex> lock(log_mutex);
      log(s);
    };
  if (parallel <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) per_seed[i] = run_seed(data, cfg, cfg.seeds[i], safe_log);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(n);
    auto worker = [&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          per_seed[i] = run_seed(data, cfg, cfg.seeds[i], safe_log);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    };
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < std::min<std::size_t>(parallel, n); ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  std::vector<RunResult> out;
  for (auto& v : per_seed)
    for (auto& r : v) out.push_back(std::move(r));
  return out;
}

nlohmann::json metrics_json(const std::vector<RunResult>& runs, const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["K"] = cfg.eval.k;
  j["seeds"] = cfg.seeds;
  nlohmann::json list = nlohmann::json::array();
  for (const auto& r : runs)
    list.push_back({{"variant", to_string(r.variant)},
                    {"sparsity", r.sparsity},
                    {"seed", r.seed},
                    {"best_epoch", r.log.best_epoch},
                    {"epochs", r.log.epochs.size()},
                    {"steps", r.log.steps},
                    {"metrics", r.report.to_json()}});
  j["runs"] = list;
  nlohmann::json agg = nlohmann::json::array();
  for (double f : cfg.sparsity)
    for (auto v : cfg.variants) {
      std::vector<MetricsReport> group;
      for (const auto& r : runs)
        if (r.variant == v && r.sparsity == f) group.push_back(r.report);
      if (group.empty()) continue;
      agg.push_back({{"variant", to_string(v)},
                     {"sparsity", f},
                     {"metrics", aggregate_seeds(group).to_json()}});
    }
  j["aggregate"] = agg;
  return j;
}

std::string metrics_text(const std::vector<RunResult>& runs, const ExperimentConfig& cfg) {
  std::ostringstream os;
  os << std::left << std::setw(20) << "variant" << std::setw(10) << "sparsity";
  for (const char* m : {"ndcg", "hr", "recall"})
    os << std::right << std::setw(22) << (std::string(m) + "@" + std::to_string(cfg.eval.k));
  os << '\n';
  for (double f : cfg.sparsity)
    for (auto v : cfg.variants) {
      std::vector<MetricsReport> group;
      for (const auto& r : runs)
        if (r.variant == v && r.sparsity == f) group.push_back(r.report);
      if (group.empty()) continue;
      auto a = aggregate_seeds(group);
      os << std::left << std::setw(20) << to_string(v) << std::setw(10) << fraction_label(f);
      for (const char* m : {"ndcg", "hr", "recall"}) {
        std::ostringstream cell;
        cell << std::fixed << std::setprecision(4) << a.metrics.at(m).mean << " +- "
             << a.metrics.at(m).std;
        os << std::right << std::setw(22) << cell.str();
      }
      os << '\n';
    }
  os << "seeds=" << cfg.seeds.size() << '\n';
  return os.str();
}

void prepare_out_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw OutputExistsError(dir.string() + " exists and is not a directory");
    if (!fs::is_empty(dir) && !force)
      throw OutputExistsError("output directory " + dir.string() +
                              " is not empty; pass --force to overwrite");
  }
  fs::create_directories(dir);
}

std::string file_hash(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::uint64_t h = 14695981039346656037ull;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    const auto n = static_cast<std::size_t>(in.gcount());
    h = fnv1a({reinterpret_cast<const unsigned char*>(buf), n}, h);
  }
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
  return std::string("fnv1a64:") + hex;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

void write_manifest(const fs::path& dir, const std::vector<fs::path>& inputs) {
  nlohmann::json inputs_j = nlohmann::json::object();
  for (const auto& p : inputs) inputs_j[p.string()] = file_hash(p);
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().filename() != "manifest.json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  nlohmann::json outputs = nlohmann::json::object();
  for (const auto& p : files)
    outputs[fs::relative(p, dir).generic_string()] = {{"hash", file_hash(p)},
                                                      {"bytes", fs::file_size(p)}};
  nlohmann::json m = {{"format_version", 1}, {"inputs", inputs_j}, {"outputs", outputs}};
  write_text(dir / "manifest.json", m.dump(2) + "\n");
}

nlohmann::json run_experiment(const ExperimentConfig& cfg, const ExperimentOptions& opt,
                              const LogFn& log) {
  cfg.validate();
  prepare_out_dir(opt.out_dir, opt.force);
  PreparedData data = prepare_data(cfg.data);
  if (!data.warning.empty() && log) log("warning: " + data.warning);
  write_text(opt.out_dir / "config.resolved.json", experiment_config_to_json(cfg).dump(2) + "\n");

  auto runs = run_all_seeds(data, cfg, opt.parallel_seeds, log);
  for (const auto& r : runs) {
    std::string name = std::string(to_string(r.variant));
    if (cfg.sparsity.size() > 1) name += "_f" + fraction_label(r.sparsity);
    write_text(opt.out_dir / "runs" / ("seed_" + std::to_string(r.seed)) / (name + ".json"),
               r.report.to_json().dump(2) + "\n");
  }
  auto metrics = metrics_json(runs, cfg);
  write_text(opt.out_dir / "metrics.json", metrics.dump(2) + "\n");
  write_text(opt.out_dir / "report.txt", metrics_text(runs, cfg));

  std::vector<fs::path> inputs = data.inputs;
  if (opt.config_path) inputs.push_back(fs::absolute(*opt.config_path));
  write_manifest(opt.out_dir, inputs);
  return metrics;
}

}  // namespace cutrec
