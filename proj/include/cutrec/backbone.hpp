#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cutrec/corpus.hpp"
#include "cutrec/linalg.hpp"

namespace cutrec {

enum class TableRole : std::uint8_t {
  ThetaT1,      // target users, TARGET phase
  ThetaT,       // target-only users, TRANSFER phase
  ThetaO,       // overlapping users, TRANSFER phase
  ThetaS,       // source-only users, TRANSFER phase
  ItemSource,
  ItemTarget,
  TransformW,
  TransformB,
};

std::string_view to_string(TableRole r);
TableRole table_role_from_string(std::string_view s);

struct EmbeddingTable {
  TableRole role = TableRole::ThetaT1;
  Matrix values;
};

// Entries i.i.d. normal(0, stddev), deterministic in `seed`.
EmbeddingTable init_embeddings(std::size_t rows, std::size_t dim, std::uint64_t seed,
                               TableRole role = TableRole::ThetaT1, double stddev = 0.1);

// A trainable table with a dense gradient buffer and a list of touched rows.
class Parameter {
 public:
  Parameter() = default;
  explicit Parameter(EmbeddingTable table);

  TableRole role() const { return role_; }
  std::string_view name() const { return to_string(role_); }
  std::size_t rows() const { return value_.rows(); }
  std::size_t dim() const { return value_.cols(); }

  Matrix& value() { return value_; }
  const Matrix& value() const { return value_; }
  const Matrix& grad() const { return grad_; }

  void add_grad(std::size_t row, std::span<const double> g, double scale = 1.0);
  bool touched(std::size_t row) const { return touched_flag_[row] != 0; }
  const std::vector<std::uint32_t>& touched_rows() const { return touched_; }
  void zero_grad();

  EmbeddingTable table() const { return {role_, value_}; }

 private:
  TableRole role_ = TableRole::ThetaT1;
  Matrix value_;
  Matrix grad_;
  std::vector<std::uint8_t> touched_flag_;
  std::vector<std::uint32_t> touched_;
};

struct AdamOptions {
  double lr = 1e-3;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction and coupled L2 weight decay. Only touched rows are
// decayed and have their moments updated; the step counter is global.
class Adam {
 public:
  Adam(AdamOptions options, std::vector<Parameter*> params);

  // Applies one update and clears all gradients. Throws on a non-finite
  // gradient, naming the parameter and row.
  void step();
  std::uint64_t steps() const { return step_; }
  const AdamOptions& options() const { return options_; }

 private:
  struct Moments {
    Matrix m, v;
  };
  AdamOptions options_;
  std::vector<Parameter*> params_;
  std::vector<Moments> moments_;
  std::uint64_t step_ = 0;
};

// Symmetric degree-normalized adjacency over users followed by items, built
// from training interactions. Weight(u, i) = 1 / sqrt(deg(u) * deg(i)).
class BipartiteGraph {
 public:
  BipartiteGraph(const InteractionSet& train, std::size_t layers);

  std::size_t n_users() const { return n_users_; }
  std::size_t n_items() const { return n_items_; }
  std::size_t n_nodes() const { return n_users_ + n_items_; }
  std::size_t layers() const { return layers_; }

  // out = A_hat * in, both n_nodes x dim.
  void multiply(const Matrix& in, Matrix& out) const;
  // mean over l = 0..layers of A_hat^l * base. A_hat is symmetric, so this is
  // also the backward map from final-embedding gradients to base gradients.
  Matrix propagate(const Matrix& base) const;
  Matrix dense() const;
  double weight(std::size_t node, std::size_t neighbor) const;

 private:
  std::size_t n_users_, n_items_, layers_;
  std::vector<std::size_t> offsets_;
  std::vector<std::uint32_t> neighbors_;
  std::vector<double> weights_;
};

// Final (user, item) embeddings of LightGCN.
std::pair<Matrix, Matrix> lightgcn_propagate(const BipartiteGraph& graph, const Matrix& users,
                                             const Matrix& items);

inline double mf_score(std::span<const double> user, std::span<const double> item) {
  return dot(user, item);
}

// Uniform over items not in `train_row` (sorted), by rejection.
std::vector<std::uint32_t> sample_negatives(const std::vector<std::uint32_t>& train_row,
                                            std::size_t n_items, std::size_t count,
                                            std::mt19937_64& rng);

struct ScoreLoss {
  double loss = 0.0;
  std::vector<double> d_pos;
  std::vector<double> d_neg;
};

// Mean binary cross-entropy over all positive and negative entries.
ScoreLoss bce_loss(std::span<const double> pos, std::span<const double> neg);
// Mean of -ln sigmoid(pos - neg) over pairs.
ScoreLoss bpr_loss(std::span<const double> pos, std::span<const double> neg);

double log_sigmoid(double x);
double sigmoid(double x);

enum class BackboneKind { MF, LightGCN };
enum class LossKind { BCE, BPR };

std::string_view to_string(BackboneKind k);
std::string_view to_string(LossKind k);
BackboneKind backbone_from_string(std::string_view s);
LossKind loss_from_string(std::string_view s);

// (L_t, L_s, L_c, L_all) of one step.
struct LossBreakdown {
  double target = 0.0;
  double source = 0.0;
  double contrastive = 0.0;
  double total = 0.0;
};

// One training batch of a domain; negatives are drawn before the forward pass.
struct Batch {
  std::vector<std::uint32_t> users;
  std::vector<std::uint32_t> pos;
  std::vector<std::uint32_t> neg;
};

Batch make_batch(std::span<const std::pair<std::uint32_t, std::uint32_t>> interactions,
                 const InteractionSet& train, std::mt19937_64& rng);

// Produces layer-0 user embeddings and routes their gradients back to
// parameters.
class UserEncoder {
 public:
  virtual ~UserEncoder() = default;
  virtual std::size_t n_users() const = 0;
  virtual std::size_t dim() const = 0;
  virtual void encode(std::uint32_t user, std::span<double> out) const = 0;
  virtual void backprop(std::uint32_t user, std::span<const double> grad) = 0;
};

// Rows [0, first.rows()) come from `first`, the rest from `second`.
class TableEncoder final : public UserEncoder {
 public:
  explicit TableEncoder(Parameter& first, Parameter* second = nullptr)
      : first_(first), second_(second) {}
  std::size_t n_users() const override;
  std::size_t dim() const override { return first_.dim(); }
  void encode(std::uint32_t user, std::span<double> out) const override;
  void backprop(std::uint32_t user, std::span<const double> grad) override;

 private:
  Parameter& first_;
  Parameter* second_;
};

// Final user/item embeddings of one domain's scoring path.
struct ScoringSnapshot {
  Matrix users;
  Matrix items;
};

// Forward/backward of one domain: MF computes only the users it is asked
// for; LightGCN propagates the whole graph.
class DomainPass {
 public:
  DomainPass(UserEncoder& users, Parameter& items, const BipartiteGraph* graph);

  void forward(std::span<const std::uint32_t> users);

  std::span<const double> user(std::uint32_t u) const;
  std::span<const double> item(std::uint32_t i) const;
  std::span<const double> layer0_user(std::uint32_t u) const;

  void add_user_grad(std::uint32_t u, std::span<const double> g, double scale);
  void add_item_grad(std::uint32_t i, std::span<const double> g, double scale);
  void add_layer0_user_grad(std::uint32_t u, std::span<const double> g, double scale);

  void backward();

 private:
  UserEncoder& encoder_;
  Parameter& items_;
  const BipartiteGraph* graph_;
  std::size_t dim_;
  // MF: slot per requested user.
  std::vector<std::int32_t> slot_;
  Matrix user0_;
  Matrix user_grad_;
  std::vector<std::uint32_t> slot_users_;
  // LightGCN: whole-graph matrices, users then items.
  Matrix base_;
  Matrix final_;
  Matrix final_grad_;
  Matrix base_user_grad_;
};

// Scores a batch and, if `backward`, adds weight * dL/dscore into the pass.
// Returns the unweighted mean loss (0 for an empty batch).
double prediction_loss(DomainPass& pass, const Batch& batch, LossKind kind, double weight,
                       bool backward);

// Final embeddings from layer-0 user rows (already encoded).
ScoringSnapshot make_snapshot(Matrix layer0_users, const Parameter& items,
                              const BipartiteGraph* graph);

// Single-domain recommender R(u, i) used for the TARGET phase and as the
// target-only baseline.
class BackboneModel {
 public:
  BackboneModel(const InteractionSet& train, std::size_t dim, BackboneKind kind,
                std::size_t layers, std::uint64_t seed);

  BackboneKind kind() const { return kind_; }
  std::size_t layers() const { return graph_ ? graph_->layers() : 0; }
  std::size_t dim() const { return users_.dim(); }

  Parameter& users() { return users_; }
  Parameter& items() { return items_; }
  const Parameter& users() const { return users_; }
  const Parameter& items() const { return items_; }
  std::vector<Parameter*> parameters() { return {&users_, &items_}; }

  double forward_backward(const Batch& batch, LossKind loss, bool backward = true);
  ScoringSnapshot snapshot() const;

 private:
  BackboneKind kind_;
  Parameter users_;
  Parameter items_;
  std::shared_ptr<const BipartiteGraph> graph_;
};

// Negative sampling + forward + backward + one Adam step.
LossBreakdown train_step_single_domain(
    BackboneModel& model, Adam& optimizer,
    std::span<const std::pair<std::uint32_t, std::uint32_t>> batch, const InteractionSet& train,
    LossKind loss, std::mt19937_64& rng);

}  // namespace cutrec
