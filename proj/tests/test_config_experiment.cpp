#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cutrec/config.hpp"
#include "cutrec/experiment.hpp"

using namespace cutrec;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string read_all(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string error_key(const json& j) {
  try {
    experiment_config_from_json(j);
  } catch (const ConfigError& e) {
    return e.key();
  }
  return "";
}

json small_experiment() {
  return json::parse(R"({
    "data": {"synth": {"n_users": 60, "n_items_per_domain": 40, "latent_dim": 4,
                       "interactions_per_user": 8, "overlap_fraction": 0.6,
                       "distortion": 1.0, "seed": 2}},
    "training": {"backbone": "mf", "dim": 8, "batch_size": 64, "lr": 0.01,
                 "max_epochs": 3, "patience": 2, "lambda": 0.01, "gamma": 0.5},
    "seeds": [0, 1],
    "variants": ["target_only", "joint", "cut", "no_transform", "no_contrastive",
                 "history_similarity"]
  })");
}

fs::path fresh_dir(const std::string& name) {
  auto d = fs::temp_directory_path() / name;
  fs::remove_all(d);
  return d;
}

}  // namespace

TEST_CASE("training config validation names the key") {
  auto key_of = [](auto mutate) {
    TrainingConfig c;
    mutate(c);
    try {
      c.validate();
    } catch (const ConfigError& e) {
      return e.key();
    }
    return std::string();
  };
  CHECK(key_of([](TrainingConfig&) {}).empty());
  CHECK(key_of([](TrainingConfig& c) { c.alpha = 1.1; }) == "alpha");
  CHECK(key_of([](TrainingConfig& c) { c.lambda = -1; }) == "lambda");
  CHECK(key_of([](TrainingConfig& c) { c.tau = 0; }) == "tau");
  CHECK(key_of([](TrainingConfig& c) { c.gamma = -1; }) == "gamma");
  CHECK(key_of([](TrainingConfig& c) { c.gamma = 1.0; }).empty());
  CHECK(key_of([](TrainingConfig& c) { c.batch_size = 0; }) == "batch_size");
}

TEST_CASE("presets") {
  TrainingConfig a, d;
  apply_preset(a, "amazon-like");
  apply_preset(d, "douban-like");
  CHECK(a.loss == LossKind::BCE);
  CHECK(a.lambda == 1e-4);
  CHECK(a.weight_decay == 1e-6);
  CHECK(d.loss == LossKind::BPR);
  CHECK(d.lambda == 5e-5);
  CHECK(d.weight_decay == 1e-7);
  CHECK_THROWS_AS(apply_preset(a, "netflix-like"), ConfigError);
}

TEST_CASE("experiment config: defaults, preset then overrides") {
  auto cfg = experiment_config_from_json(json::parse(
      R"({"preset": "douban-like", "data": {"synth": {}}, "training": {"lambda": 0.5}})"));
  CHECK(cfg.training.loss == LossKind::BPR);
  CHECK(cfg.training.lambda == 0.5);
  CHECK(cfg.training.alpha == 0.2);
  CHECK(cfg.training.gamma == 0.9);
  CHECK(cfg.training.batch_size == 2048);
  CHECK(cfg.training.lr == 0.001);
  CHECK(cfg.eval.k == 10);
}

TEST_CASE("experiment config: unknown and invalid keys are rejected by name") {
  CHECK(error_key(json::parse(R"({"data": {"synth": {}}, "bogus": 1})")) == "bogus");
  CHECK(error_key(json::parse(R"({"data": {"synth": {}}, "training": {"alpah": 0.1}})")) ==
        "training.alpah");
  CHECK(error_key(json::parse(R"({"data": {"synth": {"n_user": 5}}})")) == "data.synth.n_user");
  CHECK(error_key(json::parse(R"({"data": {"synth": {}}, "training": {"alpha": 2}})")) ==
        "training.alpha");
  CHECK(error_key(json::parse(R"({"data": {"synth": {}}, "training": {"loss": "mse"}})")) ==
        "training.loss");
  CHECK(error_key(json::parse(R"({"data": {"synth": {}}, "variants": ["cutt"]})")) ==
        "variants");
  CHECK(error_key(json::parse(R"({"training": {}})")) == "data");
  CHECK(error_key(json::parse(R"({"data": {"synth": {}}, "sparsity": [0]})")) == "sparsity");
}

TEST_CASE("experiment config: JSON round trip") {
  auto cfg = experiment_config_from_json(small_experiment());
  auto again = experiment_config_from_json(experiment_config_to_json(cfg));
  CHECK(experiment_config_to_json(again).dump() == experiment_config_to_json(cfg).dump());
  auto t = training_config_from_json(training_config_to_json(cfg.training));
  CHECK(training_config_to_json(t) == training_config_to_json(cfg.training));
}

TEST_CASE("prepare_data: missing input file is named") {
  DataSource src;
  src.source_path = "/nonexistent/source.tsv";
  src.target_path = "/nonexistent/target.tsv";
  CHECK_THROWS_WITH(prepare_data(src), doctest::Contains("/nonexistent/source.tsv"));
}

TEST_CASE("output directory refuses to overwrite without force") {
  auto d = fresh_dir("cutrec_outdir_test");
  prepare_out_dir(d, false);
  prepare_out_dir(d, false);  // empty is fine
  write_text(d / "x.txt", "hello");
  CHECK_THROWS_AS(prepare_out_dir(d, false), OutputExistsError);
  CHECK_NOTHROW(prepare_out_dir(d, true));
  fs::remove_all(d);
}

TEST_CASE("experiment: end to end, every variant, deterministic, manifest complete") {
  auto cfg = experiment_config_from_json(small_experiment());
  auto d1 = fresh_dir("cutrec_exp_a");
  auto d2 = fresh_dir("cutrec_exp_b");
  auto m1 = run_experiment(cfg, {d1, false, 1, std::nullopt});
  auto m2 = run_experiment(cfg, {d2, false, 2, std::nullopt});
  CHECK(read_all(d1 / "metrics.json") == read_all(d2 / "metrics.json"));
  CHECK(m1.at("runs").size() == 12);
  CHECK(m1.at("aggregate").size() == 6);
  for (auto& run : m1.at("runs")) {
    const double v = run.at("metrics").at("ndcg").at("mean");
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }

  auto manifest = json::parse(read_all(d1 / "manifest.json"));
  std::size_t files = 0;
  for (auto& e : fs::recursive_directory_iterator(d1)) {
    if (!e.is_regular_file() || e.path().filename() == "manifest.json") continue;
    ++files;
    auto rel = fs::relative(e.path(), d1).generic_string();
    REQUIRE(manifest.at("outputs").contains(rel));
    CHECK(manifest["outputs"][rel].at("hash") == file_hash(e.path()));
  }
  CHECK(manifest.at("outputs").size() == files);

  CHECK_THROWS_AS(run_experiment(cfg, {d1, false, 1, std::nullopt}), OutputExistsError);
  CHECK_NOTHROW(run_experiment(cfg, {d1, true, 1, std::nullopt}));
  CHECK(read_all(d1 / "metrics.json") == read_all(d2 / "metrics.json"));
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST_CASE("experiment: sparsity sweep keeps one aggregate per fraction") {
  auto j = small_experiment();
  j["seeds"] = json::array({3});
  j["variants"] = json::array({"target_only"});
  j["sparsity"] = json::array({1.0, 0.5});
  auto cfg = experiment_config_from_json(j);
  auto data = prepare_data(cfg.data);
  auto runs = run_seed(data, cfg, 3);
  REQUIRE(runs.size() == 2);
  CHECK(runs[0].sparsity == 1.0);
  CHECK(runs[1].sparsity == 0.5);
  CHECK(metrics_json(runs, cfg).at("aggregate").size() == 2);
}
