#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string_view>
#include <span>
#include <utility>
#include <vector>

#include "cutrec/backbone.hpp"
#include "cutrec/checkpoint.hpp"
#include "cutrec/corpus.hpp"
#include "cutrec/eval.hpp"
#include "cutrec/similarity.hpp"

namespace cutrec {

struct AblationFlags {
  bool no_contrastive = false;
  bool no_transform = false;
  bool history_similarity = false;
  // Shared user embeddings, identity transform, no contrastive term.
  bool joint_training_baseline = false;
};

// Identity: W = I, b = 0. Uniform: W, b ~ U(-1/sqrt(dim), 1/sqrt(dim)).
enum class TransformInit { Identity, Uniform };

std::string_view to_string(TransformInit t);
TransformInit transform_init_from_string(std::string_view s);

struct TrainingConfig {
  double alpha = 0.2;
  double lambda = 1e-4;
  double tau = 0.1;
  double gamma = 0.9;
  std::size_t batch_size = 2048;
  double lr = 1e-3;
  double weight_decay = 1e-6;
  LossKind loss = LossKind::BCE;
  BackboneKind backbone = BackboneKind::LightGCN;
  std::size_t layers = 2;
  std::size_t dim = 64;
  std::size_t max_epochs = 300;
  std::size_t patience = 10;
  std::size_t eval_k = 10;
  std::uint64_t seed = 0;
  AblationFlags ablation;
  // Initialize TRANSFER target-side tables from the TARGET phase model.
  bool warm_start = false;
  // Cosine instead of raw dot products inside the contrastive term.
  bool normalize_contrastive = false;
  TransformInit transform_init = TransformInit::Identity;

  void validate() const;
  bool transform_enabled() const {
    return !ablation.no_transform && !ablation.joint_training_baseline;
  }
  double effective_lambda() const {
    return ablation.no_contrastive || ablation.joint_training_baseline ? 0.0 : lambda;
  }
};

// F(u) = W u + b
struct TransformLayer {
  Matrix weight;             // dim x dim
  std::vector<double> bias;  // dim
};

TransformLayer identity_transform(std::size_t dim);
std::vector<double> transform(std::span<const double> u, const TransformLayer& layer);

// Accumulates the gradients of y = W u + b given dL/dy.
void transform_backward(std::span<const double> u, std::span<const double> grad_out,
                        const TransformLayer& layer, Matrix& grad_weight,
                        std::span<double> grad_bias, std::span<double> grad_input);

struct ContrastiveResult {
  double loss = 0.0;
  Matrix grad;  // d loss / d reps, aligned with reps rows
};

// Supervised-contrastive regularizer over one batch:
//   L = -(1/|S|) sum_{(i,j) in S} log(|A| exp(z_ij / tau) / sum_{(x,y) in A} exp(z_xy / tau))
// with z the dot product of rows of `reps` (rows follow pairs.users). Zero
// when S is empty.
ContrastiveResult contrastive_loss(const Matrix& reps, const PairSets& pairs, double tau,
                                   bool normalize = false);

// (1 - alpha) L_t + alpha L_s + lambda L_c
double total_loss(double target, double source, double contrastive, double alpha, double lambda);

// Backbone parameters of the TRANSFER phase plus the transformation layer.
// Target-domain users score through F(base row); source-domain users score
// through the raw base row; item rows are never transformed.
class CutModel {
 public:
  CutModel(const CrossDomainDataset& ds, const SplitDataset& source_split,
           const SplitDataset& target_split, const TrainingConfig& cfg);

  const TrainingConfig& config() const { return cfg_; }
  bool transform_enabled() const { return cfg_.transform_enabled(); }

  Parameter& theta_t() { return theta_t_; }
  Parameter& theta_o() { return theta_o_; }
  Parameter& theta_s() { return theta_s_; }
  Parameter& item_target() { return item_target_; }
  Parameter& item_source() { return item_source_; }
  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }
  const Parameter& theta_s() const { return theta_s_; }

  std::vector<Parameter*> trainable();
  TransformLayer transform_layer() const;

  LossBreakdown forward_backward(const Batch& source, const Batch& target,
                                 const SimilarityOracle* oracle, bool backward = true);

  // F(base) for every target user (identity when the transform is disabled).
  Matrix transformed_target_users() const;
  ScoringSnapshot target_snapshot() const;
  ScoringSnapshot source_snapshot() const;

  void warm_start_from(const BackboneModel& target_model);

  Checkpoint to_checkpoint() const;
  // Restores parameters; the dataset and splits must match the ones used in
  // training (graphs are rebuilt from them).
  void load_checkpoint(const Checkpoint& ckpt);

  std::uint64_t steps = 0;

 private:
  TrainingConfig cfg_;
  Parameter theta_t_, theta_o_, theta_s_;
  Parameter item_target_, item_source_;
  Parameter weight_, bias_;
  std::shared_ptr<const BipartiteGraph> target_graph_, source_graph_;
};

// Negative sampling + forward/backward + one Adam step.
LossBreakdown transfer_step(CutModel& model, Adam& optimizer,
                            std::span<const std::pair<std::uint32_t, std::uint32_t>> source_batch,
                            const InteractionSet& source_train,
                            std::span<const std::pair<std::uint32_t, std::uint32_t>> target_batch,
                            const InteractionSet& target_train, const SimilarityOracle* oracle,
                            std::mt19937_64& rng);

// Patience-based early stopping on a metric that should increase.
class EarlyStopper {
 public:
  explicit EarlyStopper(std::size_t patience) : patience_(patience) {}
  // Returns true when `metric` is a new best.
  bool update(double metric);
  bool should_stop() const { return since_best_ >= patience_; }
  double best() const { return best_; }
  std::size_t best_epoch() const { return best_epoch_; }

 private:
  std::size_t patience_;
  std::size_t epoch_ = 0;
  std::size_t best_epoch_ = 0;
  std::size_t since_best_ = 0;
  double best_ = -1.0;
};

struct EpochLog {
  std::size_t epoch = 0;
  LossBreakdown mean_loss;
  double valid_ndcg = 0.0;
};

struct TrainLog {
  std::vector<EpochLog> epochs;
  std::size_t best_epoch = 0;
  double best_valid_ndcg = 0.0;
  std::uint64_t steps = 0;
};

// Shuffled (user, item) stream over training interactions.
class InteractionStream {
 public:
  InteractionStream(const InteractionSet& train, std::uint64_t seed);
  std::size_t size() const { return pairs_.size(); }
  void reshuffle();
  // Next batch of up to `n` pairs; empty at the end of a pass.
  std::span<const std::pair<std::uint32_t, std::uint32_t>> next(std::size_t n);
  // Like next() but restarts (reshuffled) when exhausted.
  std::span<const std::pair<std::uint32_t, std::uint32_t>> next_cycling(std::size_t n);

 private:
  std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs_;
  std::size_t pos_ = 0;
  std::mt19937_64 rng_;
};

struct TargetPhaseResult {
  BackboneModel model;  // best-validation R_1
  Matrix frozen;        // float-rounded user embeddings of R_1
  SimilarityOracle oracle;
  TrainLog log;

  Checkpoint to_checkpoint(const TrainingConfig& cfg) const;
};

using EpochCallback = std::function<void(const EpochLog&)>;

TargetPhaseResult run_target_phase(const CrossDomainDataset& ds, const SplitDataset& target_split,
                                   const TrainingConfig& cfg, const EpochCallback& on_epoch = {});

// Rebuilds the TARGET-phase outputs from a checkpoint.
TargetPhaseResult target_phase_from_checkpoint(const Checkpoint& ckpt,
                                               const SplitDataset& target_split,
                                               const TrainingConfig& cfg);

struct TransferResult {
  CutModel model;  // best-validation R_2
  TrainLog log;
};

TransferResult run_transfer_phase(const CrossDomainDataset& ds, const SplitDataset& source_split,
                                  const SplitDataset& target_split, const TrainingConfig& cfg,
                                  const SimilarityOracle* oracle,
                                  const BackboneModel* warm_start = nullptr,
                                  const EpochCallback& on_epoch = {});

}  // namespace cutrec
