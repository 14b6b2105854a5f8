#include "cutrec/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace cutrec {

ConfigError::ConfigError(std::string key, const std::string& why)
    : std::runtime_error("config key '" + key + "': " + why), key_(std::move(key)), why_(why) {}

namespace {

constexpr std::pair<Variant, std::string_view> kVariants[] = {
    {Variant::TargetOnly, "target_only"},     {Variant::Joint, "joint"},
    {Variant::Cut, "cut"},                    {Variant::NoTransform, "no_transform"},
    {Variant::NoContrastive, "no_contrastive"}, {Variant::HistorySimilarity, "history_similarity"},
};

using Json = nlohmann::json;
using Handler = std::function<void(const Json&, const std::string&)>;

std::string join(const std::string& prefix, const std::string& key) {
  return prefix.empty() ? key : prefix + "." + key;
}

// Dispatches each key of `j` to its handler; unknown keys are rejected.
void visit(const Json& j, const std::string& prefix, const std::map<std::string, Handler>& handlers) {
  if (!j.is_object()) throw ConfigError(prefix.empty() ? "<root>" : prefix, "expected an object");
  for (const auto& [key, value] : j.items()) {
    auto it = handlers.find(key);
    if (it == handlers.end()) throw ConfigError(join(prefix, key), "unknown key");
    it->second(value, join(prefix, key));
  }
}

template <class T>
T get(const Json& v, const std::string& key) {
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(key, "expected a boolean");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(key, "expected an integer");
      if (std::is_unsigned_v<T> && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)
        throw ConfigError(key, "must be >= 0");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(key, "expected a number");
    } else {
      if (!v.is_string()) throw ConfigError(key, "expected a string");
    }
    return v.get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(key, e.what());
  }
}

template <class T>
Handler set(T& field) {
  return [&field](const Json& v, const std::string& key) { field = get<T>(v, key); };
}

}  // namespace

std::string_view to_string(Variant v) {
  for (auto [k, s] : kVariants)
    if (k == v) return s;
  return "?";
}

Variant variant_from_string(std::string_view s) {
  for (auto [k, name] : kVariants)
    if (name == s) return k;
  throw std::invalid_argument("unknown variant '" + std::string(s) + "'");
}

void apply_preset(TrainingConfig& cfg, const std::string& name) {
  if (name == "amazon-like") {
    cfg.loss = LossKind::BCE;
    cfg.lambda = 1e-4;
    cfg.weight_decay = 1e-6;
  } else if (name == "douban-like") {
    cfg.loss = LossKind::BPR;
    cfg.lambda = 5e-5;
    cfg.weight_decay = 1e-7;
  } else {
    throw ConfigError("preset", "unknown preset '" + name + "' (amazon-like, douban-like)");
  }
}

Json training_config_to_json(const TrainingConfig& c) {
  return {
      {"alpha", c.alpha},
      {"lambda", c.lambda},
      {"tau", c.tau},
      {"gamma", c.gamma},
      {"batch_size", c.batch_size},
      {"lr", c.lr},
      {"weight_decay", c.weight_decay},
      {"loss", to_string(c.loss)},
      {"backbone", to_string(c.backbone)},
      {"layers", c.layers},
      {"dim", c.dim},
      {"max_epochs", c.max_epochs},
      {"patience", c.patience},
      {"eval_k", c.eval_k},
      {"seed", c.seed},
      {"warm_start", c.warm_start},
      {"normalize_contrastive", c.normalize_contrastive},
      {"transform_init", to_string(c.transform_init)},
      {"ablation",
       {{"no_contrastive", c.ablation.no_contrastive},
        {"no_transform", c.ablation.no_transform},
        {"history_similarity", c.ablation.history_similarity},
        {"joint_training_baseline", c.ablation.joint_training_baseline}}},
  };
}

TrainingConfig training_config_from_json(const Json& j, TrainingConfig c, const std::string& prefix) {
  auto enum_handler = [](auto& field, auto parse) {
    return [&field, parse](const Json& v, const std::string& key) {
      try {
        field = parse(get<std::string>(v, key));
      } catch (const std::invalid_argument& e) {
        throw ConfigError(key, e.what());
      }
    };
  };
  visit(j, prefix,
        {
            {"alpha", set(c.alpha)},
            {"lambda", set(c.lambda)},
            {"tau", set(c.tau)},
            {"gamma", set(c.gamma)},
            {"batch_size", set(c.batch_size)},
            {"lr", set(c.lr)},
            {"weight_decay", set(c.weight_decay)},
            {"loss", enum_handler(c.loss, [](const std::string& s) { return loss_from_string(s); })},
            {"backbone",
             enum_handler(c.backbone, [](const std::string& s) { return backbone_from_string(s); })},
            {"layers", set(c.layers)},
            {"dim", set(c.dim)},
            {"max_epochs", set(c.max_epochs)},
            {"patience", set(c.patience)},
            {"eval_k", set(c.eval_k)},
            {"seed", set(c.seed)},
            {"warm_start", set(c.warm_start)},
            {"normalize_contrastive", set(c.normalize_contrastive)},
            {"transform_init", enum_handler(c.transform_init, [](const std::string& s) {
               return transform_init_from_string(s);
             })},
            {"ablation",
             [&c](const Json& v, const std::string& key) {
               visit(v, key,
                     {{"no_contrastive", set(c.ablation.no_contrastive)},
                      {"no_transform", set(c.ablation.no_transform)},
                      {"history_similarity", set(c.ablation.history_similarity)},
                      {"joint_training_baseline", set(c.ablation.joint_training_baseline)}});
             }},
        });
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(join(prefix, e.key()), e.why());
  }
  return c;
}

Json synth_config_to_json(const SynthConfig& s) {
  return {
      {"n_users", s.n_users},
      {"n_items_per_domain", s.n_items_per_domain},
      {"latent_dim", s.latent_dim},
      {"overlap_fraction", s.overlap_fraction},
      {"distortion", s.distortion},
      {"interactions_per_user", s.interactions_per_user},
      {"source_interactions_per_user", s.source_interactions_per_user},
      {"seed", s.seed},
      {"n_clusters", s.n_clusters},
      {"cluster_spread", s.cluster_spread},
      {"noise", s.noise},
      {"popularity_skew", s.popularity_skew},
      {"share_item_factors", s.share_item_factors},
  };
}

SynthConfig synth_config_from_json(const Json& j, SynthConfig s, const std::string& prefix) {
  visit(j, prefix,
        {
            {"n_users", set(s.n_users)},
            {"n_items_per_domain", set(s.n_items_per_domain)},
            {"latent_dim", set(s.latent_dim)},
            {"overlap_fraction", set(s.overlap_fraction)},
            {"distortion", set(s.distortion)},
            {"interactions_per_user", set(s.interactions_per_user)},
            {"source_interactions_per_user", set(s.source_interactions_per_user)},
            {"seed", set(s.seed)},
            {"n_clusters", set(s.n_clusters)},
            {"cluster_spread", set(s.cluster_spread)},
            {"noise", set(s.noise)},
            {"popularity_skew", set(s.popularity_skew)},
            {"share_item_factors", set(s.share_item_factors)},
        });
  try {
    s.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(prefix, e.what());
  }
  return s;
}

void ExperimentConfig::validate(bool require_data) const {
  const bool files = data.source_path || data.target_path;
  if (files && data.synth) throw ConfigError("data", "give either TSV paths or a synth section");
  if (require_data && !files && !data.synth) throw ConfigError("data", "no data source (TSV paths or synth)");
  if (files && !(data.source_path && data.target_path))
    throw ConfigError(data.source_path ? "data.target" : "data.source", "missing path");
  if (ratios.train == 0 || ratios.valid + ratios.test == 0)
    throw ConfigError("split.ratios", "need train > 0 and held-out parts");
  try {
    training.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(e.key().rfind("training.", 0) == 0 ? e.key() : "training." + e.key(), e.why());
  }
  if (eval.k == 0) throw ConfigError("eval.k", "must be positive");
  if (seeds.empty()) throw ConfigError("seeds", "must not be empty");
  if (variants.empty()) throw ConfigError("variants", "must not be empty");
  if (sparsity.empty()) throw ConfigError("sparsity", "must not be empty");
  for (double f : sparsity)
    if (!(f > 0.0 && f <= 1.0)) throw ConfigError("sparsity", "fractions must be in (0, 1]");
}

Json experiment_config_to_json(const ExperimentConfig& c) {
  Json j;
  if (!c.preset.empty()) j["preset"] = c.preset;
  Json data = Json::object();
  if (c.data.source_path) data["source"] = c.data.source_path->string();
  if (c.data.target_path) data["target"] = c.data.target_path->string();
  if (c.data.source_path) data["min_count"] = c.data.min_count;
  if (c.data.synth) data["synth"] = synth_config_to_json(*c.data.synth);
  j["data"] = data;
  const char* order = c.split_order == SplitOrder::Auto            ? "auto"
                      : c.split_order == SplitOrder::Chronological ? "chronological"
                                                                   : "random";
  j["split"] = {{"order", order}, {"ratios", {c.ratios.train, c.ratios.valid, c.ratios.test}}};
  j["training"] = training_config_to_json(c.training);
  j["eval"] = {{"k", c.eval.k}, {"mask_seen", c.eval.mask_seen}};
  j["seeds"] = c.seeds;
  Json variants = Json::array();
  for (auto v : c.variants) variants.push_back(to_string(v));
  j["variants"] = variants;
  j["sparsity"] = c.sparsity;
  if (c.out_dir) j["out_dir"] = c.out_dir->string();
  return j;
}

ExperimentConfig experiment_config_from_json(const Json& j, const std::filesystem::path& base_dir,
                                             bool require_data) {
  ExperimentConfig c;
  if (!j.is_object()) throw ConfigError("<root>", "expected an object");
  // Preset first so explicit training keys override it.
  if (j.contains("preset")) {
    c.preset = get<std::string>(j["preset"], "preset");
    apply_preset(c.training, c.preset);
  }
  auto path = [&base_dir](const Json& v, const std::string& key) {
    std::filesystem::path p = get<std::string>(v, key);
    return p.is_relative() && !base_dir.empty() ? base_dir / p : p;
  };
  visit(j, "",
        {
            {"preset", [](const Json&, const std::string&) {}},
            {"data",
             [&](const Json& v, const std::string& key) {
               visit(v, key,
                     {{"source", [&](const Json& x, const std::string& k) {
                         c.data.source_path = path(x, k);
                       }},
                      {"target", [&](const Json& x, const std::string& k) {
                         c.data.target_path = path(x, k);
                       }},
                      {"min_count", set(c.data.min_count)},
                      {"synth", [&](const Json& x, const std::string& k) {
                         c.data.synth = synth_config_from_json(x, {}, k);
                       }}});
             }},
            {"split",
             [&](const Json& v, const std::string& key) {
               visit(v, key,
                     {{"order",
                       [&](const Json& x, const std::string& k) {
                         auto s = get<std::string>(x, k);
                         if (s == "auto") c.split_order = SplitOrder::Auto;
                         else if (s == "chronological") c.split_order = SplitOrder::Chronological;
                         else if (s == "random") c.split_order = SplitOrder::Random;
                         else throw ConfigError(k, "expected auto, chronological or random");
                       }},
                      {"ratios", [&](const Json& x, const std::string& k) {
                         if (!x.is_array() || x.size() != 3)
                           throw ConfigError(k, "expected [train, valid, test]");
                         c.ratios = {get<unsigned>(x[0], k), get<unsigned>(x[1], k),
                                     get<unsigned>(x[2], k)};
                       }}});
             }},
            {"training",
             [&](const Json& v, const std::string& key) {
               c.training = training_config_from_json(v, c.training, key);
             }},
            {"eval",
             [&](const Json& v, const std::string& key) {
               visit(v, key, {{"k", set(c.eval.k)}, {"mask_seen", set(c.eval.mask_seen)}});
             }},
            {"seeds",
             [&](const Json& v, const std::string& key) {
               if (!v.is_array()) throw ConfigError(key, "expected a list of integers");
               c.seeds.clear();
               for (const auto& x : v) c.seeds.push_back(get<std::uint64_t>(x, key));
             }},
            {"variants",
             [&](const Json& v, const std::string& key) {
               if (!v.is_array()) throw ConfigError(key, "expected a list of names");
               c.variants.clear();
               for (const auto& x : v) {
                 try {
                   c.variants.push_back(variant_from_string(get<std::string>(x, key)));
                 } catch (const std::invalid_argument& e) {
                   throw ConfigError(key, e.what());
                 }
               }
             }},
            {"sparsity",
             [&](const Json& v, const std::string& key) {
               if (!v.is_array()) throw ConfigError(key, "expected a list of fractions");
               c.sparsity.clear();
               for (const auto& x : v) c.sparsity.push_back(get<double>(x, key));
             }},
            {"out_dir",
             [&](const Json& v, const std::string& key) { c.out_dir = path(v, key); }},
        });
  c.training.eval_k = c.eval.k;
  c.validate(require_data);
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path, bool require_data) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config '" + path.string() + "'");
  Json j;
  try {
    j = Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("<root>", std::string("invalid JSON in ") + path.string() + ": " + e.what());
  }
  return experiment_config_from_json(j, path.parent_path(), require_data);
}

}  // namespace cutrec
