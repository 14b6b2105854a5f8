#include "cutrec/cut.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "cutrec/config.hpp"

namespace cutrec {

void TrainingConfig::validate() const {
  auto bad = [](const std::string& key, const std::string& why) {
    throw ConfigError(key, why);
  };
  if (!(alpha >= 0.0 && alpha <= 1.0)) bad("alpha", "must be in [0, 1]");
  if (!(lambda >= 0.0)) bad("lambda", "must be >= 0");
  if (!(tau > 0.0)) bad("tau", "must be > 0");
  if (!(gamma > -1.0 && gamma <= 1.0)) bad("gamma", "must be in (-1, 1]");
  if (batch_size == 0) bad("batch_size", "must be positive");
  if (!(lr > 0.0)) bad("lr", "must be > 0");
  if (!(weight_decay >= 0.0)) bad("weight_decay", "must be >= 0");
  if (dim == 0) bad("dim", "must be positive");
  if (max_epochs == 0) bad("max_epochs", "must be positive");
  if (eval_k == 0) bad("eval_k", "must be positive");
}

// ---------------------------------------------------------------- Transform

std::string_view to_string(TransformInit t) {
  return t == TransformInit::Identity ? "identity" : "uniform";
}

TransformInit transform_init_from_string(std::string_view s) {
  if (s == "identity") return TransformInit::Identity;
  if (s == "uniform") return TransformInit::Uniform;
  throw std::invalid_argument("unknown transform init '" + std::string(s) + "'");
}

TransformLayer identity_transform(std::size_t dim) {
  TransformLayer t{Matrix(dim, dim), std::vector<double>(dim, 0.0)};
  for (std::size_t d = 0; d < dim; ++d) t.weight(d, d) = 1.0;
  return t;
}

std::vector<double> transform(std::span<const double> u, const TransformLayer& layer) {
  if (layer.weight.cols() != u.size() || layer.bias.size() != layer.weight.rows())
    throw std::invalid_argument("transform: shape mismatch");
  std::vector<double> out(layer.bias);
  for (std::size_t r = 0; r < out.size(); ++r) out[r] += dot(layer.weight.row(r), u);
  return out;
}

void transform_backward(std::span<const double> u, std::span<const double> grad_out,
                        const TransformLayer& layer, Matrix& grad_weight,
                        std::span<double> grad_bias, std::span<double> grad_input) {
  for (std::size_t r = 0; r < grad_out.size(); ++r) {
    axpy(grad_out[r], u, grad_weight.row(r));
    grad_bias[r] += grad_out[r];
    axpy(grad_out[r], layer.weight.row(r), grad_input);
  }
}

namespace {

// F applied on top of another encoder; W and b live in Parameters.
class TransformEncoder final : public UserEncoder {
 public:
  TransformEncoder(UserEncoder& inner, Parameter& weight, Parameter& bias, bool enabled)
      : inner_(inner), weight_(weight), bias_(bias), enabled_(enabled), tmp_(inner.dim()) {}

  std::size_t n_users() const override { return inner_.n_users(); }
  std::size_t dim() const override { return inner_.dim(); }

  void encode(std::uint32_t user, std::span<double> out) const override {
    if (!enabled_) {
      inner_.encode(user, out);
      return;
    }
    inner_.encode(user, tmp_);
    auto b = bias_.value().row(0);
    for (std::size_t r = 0; r < out.size(); ++r) out[r] = b[r] + dot(weight_.value().row(r), tmp_);
  }

  void backprop(std::uint32_t user, std::span<const double> grad) override {
    if (!enabled_) {
      inner_.backprop(user, grad);
      return;
    }
    inner_.encode(user, tmp_);
    std::vector<double> grad_in(grad.size(), 0.0);
    for (std::size_t r = 0; r < grad.size(); ++r) {
      if (grad[r] == 0.0) continue;
      weight_.add_grad(r, tmp_, grad[r]);
      axpy(grad[r], weight_.value().row(r), grad_in);
    }
    bias_.add_grad(0, grad);
    inner_.backprop(user, grad_in);
  }

 private:
  UserEncoder& inner_;
  Parameter& weight_;
  Parameter& bias_;
  bool enabled_;
  mutable std::vector<double> tmp_;
};

Parameter make_table(std::size_t rows, std::size_t dim, std::uint64_t seed, TableRole role) {
  if (rows == 0) return Parameter(EmbeddingTable{role, Matrix(0, dim)});
  return Parameter(init_embeddings(rows, dim, seed, role));
}

}  // namespace

// -------------------------------------------------------------- Contrastive

ContrastiveResult contrastive_loss(const Matrix& reps, const PairSets& pairs, double tau,
                                   bool normalize) {
  if (!(tau > 0.0)) throw std::invalid_argument("contrastive_loss: tau must be > 0");
  const std::size_t n = pairs.users.size();
  if (reps.rows() != n) throw std::invalid_argument("contrastive_loss: reps/pairs size mismatch");
  ContrastiveResult out;
  out.grad = Matrix(n, reps.cols());
  if (n < 2 || pairs.similar.empty()) return out;

  Matrix v = reps;
  std::vector<double> norms(n, 1.0);
  if (normalize) {
    for (std::size_t x = 0; x < n; ++x) {
      norms[x] = norm(reps.row(x));
      if (norms[x] == 0.0) throw std::invalid_argument("contrastive_loss: zero vector with normalize");
      for (auto& e : v.row(x)) e /= norms[x];
    }
  }

  // Logits over ordered pairs x != y.
  Matrix logit(n, n);
  double max_logit = -std::numeric_limits<double>::infinity();
  for (std::size_t x = 0; x < n; ++x)
    for (std::size_t y = x + 1; y < n; ++y) {
      const double l = dot(v.row(x), v.row(y)) / tau;
      logit(x, y) = logit(y, x) = l;
      max_logit = std::max(max_logit, l);
    }
  double sum = 0.0;
  for (std::size_t x = 0; x < n; ++x)
    for (std::size_t y = 0; y < n; ++y)
      if (x != y) sum += std::exp(logit(x, y) - max_logit);
  const double lse = max_logit + std::log(sum);
  const double n_all = static_cast<double>(pairs.all_count());
  const double n_sim = static_cast<double>(pairs.similar.size());

  double sim_logits = 0.0;
  for (auto [i, j] : pairs.similar) sim_logits += logit(i, j);
  out.loss = lse - std::log(n_all) - sim_logits / n_sim;

  // d L / d logit_xy = softmax_xy - [xy in S] / |S|; logit = z / tau.
  Matrix dz(n, n);
  for (std::size_t x = 0; x < n; ++x)
    for (std::size_t y = 0; y < n; ++y)
      if (x != y) dz(x, y) = std::exp(logit(x, y) - lse) / tau;
  for (auto [i, j] : pairs.similar) dz(i, j) -= 1.0 / (n_sim * tau);

  Matrix dv(n, reps.cols());
  for (std::size_t x = 0; x < n; ++x)
    for (std::size_t y = 0; y < n; ++y)
      if (x != y) axpy(dz(x, y) + dz(y, x), v.row(y), dv.row(x));

  if (!normalize) {
    out.grad = std::move(dv);
    return out;
  }
  // Through v = r / |r|: dr = (dv - v (v . dv)) / |r|.
  for (std::size_t x = 0; x < n; ++x) {
    const double proj = dot(v.row(x), dv.row(x));
    auto g = out.grad.row(x);
    for (std::size_t d = 0; d < g.size(); ++d) g[d] = (dv(x, d) - v(x, d) * proj) / norms[x];
  }
  return out;
}

double total_loss(double target, double source, double contrastive, double alpha, double lambda) {
  return (1.0 - alpha) * target + alpha * source + lambda * contrastive;
}

// ----------------------------------------------------------------- CutModel

CutModel::CutModel(const CrossDomainDataset& ds, const SplitDataset& source_split,
                   const SplitDataset& target_split, const TrainingConfig& cfg)
    : cfg_(cfg),
      theta_t_(make_table(ds.n_target_only, cfg.dim, derive_seed(cfg.seed, 21), TableRole::ThetaT)),
      theta_o_(make_table(ds.n_overlap, cfg.dim, derive_seed(cfg.seed, 22), TableRole::ThetaO)),
      theta_s_(make_table(ds.n_source_only, cfg.dim, derive_seed(cfg.seed, 23), TableRole::ThetaS)),
      item_target_(make_table(ds.n_target_items(), cfg.dim, derive_seed(cfg.seed, 24),
                              TableRole::ItemTarget)),
      item_source_(make_table(ds.n_source_items(), cfg.dim, derive_seed(cfg.seed, 25),
                              TableRole::ItemSource)) {
  cfg_.validate();
  auto id = identity_transform(cfg.dim);
  Matrix b(1, cfg.dim);
  if (cfg.transform_init == TransformInit::Uniform) {
    std::mt19937_64 rng(derive_seed(cfg.seed, 26));
    const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.dim));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (auto& v : id.weight.data()) v = u(rng);
    for (auto& v : b.data()) v = u(rng);
  }
  weight_ = Parameter(EmbeddingTable{TableRole::TransformW, id.weight});
  bias_ = Parameter(EmbeddingTable{TableRole::TransformB, b});
  if (target_split.train.n_users() != ds.n_target_users() ||
      source_split.train.n_users() != ds.n_source_users())
    throw std::invalid_argument("CutModel: splits do not match the dataset");
  if (cfg.backbone == BackboneKind::LightGCN) {
    target_graph_ = std::make_shared<BipartiteGraph>(target_split.train, cfg.layers);
    source_graph_ = std::make_shared<BipartiteGraph>(source_split.train, cfg.layers);
  }
}

std::vector<Parameter*> CutModel::trainable() {
  std::vector<Parameter*> out{&theta_t_, &theta_o_, &theta_s_, &item_target_, &item_source_};
  if (transform_enabled()) {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }
  return out;
}

TransformLayer CutModel::transform_layer() const {
  if (!transform_enabled()) return identity_transform(cfg_.dim);
  auto b = bias_.value().row(0);
  return {weight_.value(), std::vector<double>(b.begin(), b.end())};
}

LossBreakdown CutModel::forward_backward(const Batch& source, const Batch& target,
                                         const SimilarityOracle* oracle, bool backward) {
  LossBreakdown lb;
  const double lambda = cfg_.effective_lambda();

  TableEncoder source_enc(theta_o_, &theta_s_);
  DomainPass sp(source_enc, item_source_, source_graph_.get());
  sp.forward(source.users);
  lb.source = prediction_loss(sp, source, cfg_.loss, cfg_.alpha, backward);
  if (backward) sp.backward();

  TableEncoder base_enc(theta_t_, &theta_o_);
  TransformEncoder target_enc(base_enc, weight_, bias_, transform_enabled());
  DomainPass tp(target_enc, item_target_, target_graph_.get());
  tp.forward(target.users);
  lb.target = prediction_loss(tp, target, cfg_.loss, 1.0 - cfg_.alpha, backward);

  if (lambda > 0.0) {
    if (!oracle) throw std::invalid_argument("CutModel: contrastive term needs a similarity oracle");
    PairSets pairs = extract_pairs(target.users, *oracle);
    Matrix reps(pairs.users.size(), cfg_.dim);
    for (std::size_t x = 0; x < pairs.users.size(); ++x) {
      auto src = tp.layer0_user(pairs.users[x]);
      std::copy(src.begin(), src.end(), reps.row(x).begin());
    }
    auto cr = contrastive_loss(reps, pairs, cfg_.tau, cfg_.normalize_contrastive);
    lb.contrastive = cr.loss;
    if (backward && !pairs.similar.empty())
      for (std::size_t x = 0; x < pairs.users.size(); ++x)
        tp.add_layer0_user_grad(pairs.users[x], cr.grad.row(x), lambda);
  }
  if (backward) tp.backward();
  lb.total = total_loss(lb.target, lb.source, lb.contrastive, cfg_.alpha, lambda);
  return lb;
}

Matrix CutModel::transformed_target_users() const {
  const std::size_t n = theta_t_.rows() + theta_o_.rows();
  Matrix out(n, cfg_.dim);
  const auto layer = transform_layer();
  for (std::size_t u = 0; u < n; ++u) {
    auto base = u < theta_t_.rows() ? theta_t_.value().row(u)
                                    : theta_o_.value().row(u - theta_t_.rows());
    auto y = transform(base, layer);
    std::copy(y.begin(), y.end(), out.row(u).begin());
  }
  return out;
}

ScoringSnapshot CutModel::target_snapshot() const {
  return make_snapshot(transformed_target_users(), item_target_, target_graph_.get());
}

ScoringSnapshot CutModel::source_snapshot() const {
  const std::size_t n = theta_o_.rows() + theta_s_.rows();
  Matrix users(n, cfg_.dim);
  for (std::size_t u = 0; u < n; ++u) {
    auto src = u < theta_o_.rows() ? theta_o_.value().row(u)
                                   : theta_s_.value().row(u - theta_o_.rows());
    std::copy(src.begin(), src.end(), users.row(u).begin());
  }
  return make_snapshot(std::move(users), item_source_, source_graph_.get());
}

void CutModel::warm_start_from(const BackboneModel& target_model) {
  const auto& users = target_model.users().value();
  if (users.rows() != theta_t_.rows() + theta_o_.rows() || users.cols() != cfg_.dim)
    throw std::invalid_argument("warm start: TARGET-phase model does not match");
  for (std::size_t u = 0; u < users.rows(); ++u) {
    auto dst = u < theta_t_.rows() ? theta_t_.value().row(u)
                                   : theta_o_.value().row(u - theta_t_.rows());
    std::copy(users.row(u).begin(), users.row(u).end(), dst.begin());
  }
  item_target_.value() = target_model.items().value();
}

Checkpoint CutModel::to_checkpoint() const {
  Checkpoint c;
  c.meta["phase"] = "transfer";
  c.meta["step"] = steps;
  c.meta["dim"] = cfg_.dim;
  c.meta["hyperparameters"] = training_config_to_json(cfg_);
  for (const auto* p : {&theta_t_, &theta_o_, &theta_s_, &item_target_, &item_source_})
    c.tables.push_back(p->table());
  auto layer = transform_layer();
  c.transform_weight = layer.weight;
  Matrix b(1, cfg_.dim);
  std::copy(layer.bias.begin(), layer.bias.end(), b.row(0).begin());
  c.transform_bias = b;
  return c;
}

void CutModel::load_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.meta.value("phase", "") != "transfer")
    throw std::runtime_error("checkpoint is not a TRANSFER-phase model");
  for (auto* p : {&theta_t_, &theta_o_, &theta_s_, &item_target_, &item_source_}) {
    const auto& t = ckpt.table(p->role());
    if (t.values.rows() != p->rows() || t.values.cols() != p->dim())
      throw std::runtime_error("checkpoint table '" + std::string(p->name()) +
                               "' does not match the dataset");
    p->value() = t.values;
  }
  if (!ckpt.transform_weight || !ckpt.transform_bias)
    throw std::runtime_error("checkpoint has no transform section");
  weight_.value() = *ckpt.transform_weight;
  bias_.value() = *ckpt.transform_bias;
  steps = ckpt.meta.value("step", std::uint64_t{0});
}

LossBreakdown transfer_step(CutModel& model, Adam& optimizer,
                            std::span<const std::pair<std::uint32_t, std::uint32_t>> source_batch,
                            const InteractionSet& source_train,
                            std::span<const std::pair<std::uint32_t, std::uint32_t>> target_batch,
                            const InteractionSet& target_train, const SimilarityOracle* oracle,
                            std::mt19937_64& rng) {
  Batch s = make_batch(source_batch, source_train, rng);
  Batch t = make_batch(target_batch, target_train, rng);
  auto lb = model.forward_backward(s, t, oracle);
  optimizer.step();
  ++model.steps;
  return lb;
}

// ----------------------------------------------------------------- Training

bool EarlyStopper::update(double metric) {
  ++epoch_;
  if (epoch_ == 1 || metric > best_) {
    best_ = metric;
    best_epoch_ = epoch_;
    since_best_ = 0;
    return true;
  }
  ++since_best_;
  return false;
}

InteractionStream::InteractionStream(const InteractionSet& train, std::uint64_t seed) : rng_(seed) {
  for (std::size_t u = 0; u < train.n_users(); ++u)
    for (auto i : train.row(u)) pairs_.emplace_back(static_cast<std::uint32_t>(u), i);
  reshuffle();
}

void InteractionStream::reshuffle() {
  std::shuffle(pairs_.begin(), pairs_.end(), rng_);
  pos_ = 0;
}

std::span<const std::pair<std::uint32_t, std::uint32_t>> InteractionStream::next(std::size_t n) {
  const std::size_t take = std::min(n, pairs_.size() - pos_);
  std::span<const std::pair<std::uint32_t, std::uint32_t>> out(pairs_.data() + pos_, take);
  pos_ += take;
  return out;
}

std::span<const std::pair<std::uint32_t, std::uint32_t>> InteractionStream::next_cycling(
    std::size_t n) {
  if (pairs_.empty()) return {};
  if (pos_ >= pairs_.size()) reshuffle();
  return next(n);
}

namespace {

bool has_valid(const SplitDataset& split) { return split.valid.nnz() > 0; }

double valid_ndcg(const ScoringSnapshot& snap, const SplitDataset& split, std::size_t k) {
  EvalOptions opt;
  opt.k = k;
  opt.target = EvalTarget::Valid;
  return evaluate_full(snap, split, opt).mean("ndcg");
}

void accumulate(LossBreakdown& acc, const LossBreakdown& x) {
  acc.target += x.target;
  acc.source += x.source;
  acc.contrastive += x.contrastive;
  acc.total += x.total;
}

void divide(LossBreakdown& acc, double n) {
  if (n == 0.0) return;
  acc.target /= n;
  acc.source /= n;
  acc.contrastive /= n;
  acc.total /= n;
}

template <class Model, class SnapshotFn, class EpochFn>
Model train_loop(Model model, const SplitDataset& target_split, const TrainingConfig& cfg,
                 TrainLog& log, const EpochCallback& on_epoch, SnapshotFn snapshot,
                 EpochFn run_epoch) {
  EarlyStopper stopper(cfg.patience);
  Model best = model;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    EpochLog e;
    e.epoch = epoch;
    try {
      e.mean_loss = run_epoch(model);
    } catch (const std::runtime_error& err) {
      throw std::runtime_error("training diverged at epoch " + std::to_string(epoch) + ": " +
                               err.what());
    }
    if (has_valid(target_split)) {
      e.valid_ndcg = valid_ndcg(snapshot(model), target_split, cfg.eval_k);
      if (stopper.update(e.valid_ndcg)) best = model;
    } else {
      best = model;
    }
    log.epochs.push_back(e);
    if (on_epoch) on_epoch(e);
    if (has_valid(target_split) && stopper.should_stop()) break;
  }
  log.best_epoch = has_valid(target_split) ? stopper.best_epoch() : log.epochs.size();
  log.best_valid_ndcg = has_valid(target_split) ? stopper.best() : 0.0;
  return best;
}

}  // namespace

TargetPhaseResult run_target_phase(const CrossDomainDataset& ds, const SplitDataset& target_split,
                                   const TrainingConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  if (target_split.train.n_users() != ds.n_target_users())
    throw std::invalid_argument("run_target_phase: split does not match dataset");
  BackboneModel model(target_split.train, cfg.dim, cfg.backbone, cfg.layers,
                      derive_seed(cfg.seed, 1));
  InteractionStream stream(target_split.train, derive_seed(cfg.seed, 2));
  std::mt19937_64 rng(derive_seed(cfg.seed, 3));
  TrainLog log;
  std::unique_ptr<Adam> opt;
  auto run_epoch = [&](BackboneModel& m) {
    if (!opt) opt = std::make_unique<Adam>(AdamOptions{cfg.lr, cfg.weight_decay}, m.parameters());
    LossBreakdown acc;
    double batches = 0;
    stream.reshuffle();
    for (auto b = stream.next(cfg.batch_size); !b.empty(); b = stream.next(cfg.batch_size)) {
      accumulate(acc, train_step_single_domain(m, *opt, b, target_split.train, cfg.loss, rng));
      ++batches;
    }
    divide(acc, batches);
    log.steps = opt->steps();
    return acc;
  };
  auto snapshot = [](const BackboneModel& m) { return m.snapshot(); };
  // The optimizer binds to the live model; train_loop keeps `model` in place.
  BackboneModel best = train_loop(std::move(model), target_split, cfg, log, on_epoch, snapshot,
                                  run_epoch);
  Matrix frozen = round_to_float(best.users().value());
  SimilarityOracle oracle = cfg.ablation.history_similarity
                                ? SimilarityOracle::from_history(target_split.train, cfg.gamma)
                                : SimilarityOracle::from_embeddings(frozen, cfg.gamma);
  return {std::move(best), std::move(frozen), std::move(oracle), std::move(log)};
}

Checkpoint TargetPhaseResult::to_checkpoint(const TrainingConfig& cfg) const {
  Checkpoint c;
  c.meta["phase"] = "target";
  c.meta["step"] = log.steps;
  c.meta["dim"] = cfg.dim;
  c.meta["hyperparameters"] = training_config_to_json(cfg);
  c.tables.push_back({TableRole::ThetaT1, frozen});
  c.tables.push_back(model.items().table());
  return c;
}

TargetPhaseResult target_phase_from_checkpoint(const Checkpoint& ckpt,
                                               const SplitDataset& target_split,
                                               const TrainingConfig& cfg) {
  if (ckpt.meta.value("phase", "") != "target")
    throw std::runtime_error("checkpoint is not a TARGET-phase model");
  const auto& users = ckpt.table(TableRole::ThetaT1);
  const auto& items = ckpt.table(TableRole::ItemTarget);
  if (users.values.rows() != target_split.train.n_users() ||
      items.values.rows() != target_split.train.n_items())
    throw std::runtime_error("TARGET-phase checkpoint does not match the dataset");
  BackboneModel model(target_split.train, users.values.cols(), cfg.backbone, cfg.layers, 0);
  model.users().value() = users.values;
  model.items().value() = items.values;
  SimilarityOracle oracle = cfg.ablation.history_similarity
                                ? SimilarityOracle::from_history(target_split.train, cfg.gamma)
                                : SimilarityOracle::from_embeddings(users.values, cfg.gamma);
  TrainLog log;
  log.steps = ckpt.meta.value("step", std::uint64_t{0});
  return {std::move(model), users.values, std::move(oracle), std::move(log)};
}

TransferResult run_transfer_phase(const CrossDomainDataset& ds, const SplitDataset& source_split,
                                  const SplitDataset& target_split, const TrainingConfig& cfg,
                                  const SimilarityOracle* oracle, const BackboneModel* warm_start,
                                  const EpochCallback& on_epoch) {
  cfg.validate();
  if (cfg.effective_lambda() > 0.0 && !oracle)
    throw std::invalid_argument("run_transfer_phase: contrastive term needs a similarity oracle");
  CutModel model(ds, source_split, target_split, cfg);
  if (cfg.warm_start) {
    if (!warm_start) throw std::invalid_argument("run_transfer_phase: warm_start needs R_1");
    model.warm_start_from(*warm_start);
  }
  InteractionStream target_stream(target_split.train, derive_seed(cfg.seed, 31));
  InteractionStream source_stream(source_split.train, derive_seed(cfg.seed, 32));
  std::mt19937_64 rng(derive_seed(cfg.seed, 33));
  TrainLog log;
  std::unique_ptr<Adam> opt;
  auto run_epoch = [&](CutModel& m) {
    if (!opt) opt = std::make_unique<Adam>(AdamOptions{cfg.lr, cfg.weight_decay}, m.trainable());
    LossBreakdown acc;
    double batches = 0;
    target_stream.reshuffle();
    for (auto t = target_stream.next(cfg.batch_size); !t.empty();
         t = target_stream.next(cfg.batch_size)) {
      auto s = source_stream.next_cycling(cfg.batch_size);
      if (s.empty()) throw std::runtime_error("source domain has no training interactions");
      accumulate(acc, transfer_step(m, *opt, s, source_split.train, t, target_split.train, oracle,
                                    rng));
      ++batches;
    }
    divide(acc, batches);
    log.steps = opt->steps();
    return acc;
  };
  auto snapshot = [](const CutModel& m) { return m.target_snapshot(); };
  CutModel best = train_loop(std::move(model), target_split, cfg, log, on_epoch, snapshot, run_epoch);
  return {std::move(best), std::move(log)};
}

}  // namespace cutrec
