#include "cutrec/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cutrec {

std::string_view to_string(TableRole r) {
  switch (r) {
    case TableRole::ThetaT1: return "theta_t1";
    case TableRole::ThetaT: return "theta_t";
    case TableRole::ThetaO: return "theta_o";
    case TableRole::ThetaS: return "theta_s";
    case TableRole::ItemSource: return "item_source";
    case TableRole::ItemTarget: return "item_target";
    case TableRole::TransformW: return "transform_w";
    case TableRole::TransformB: return "transform_b";
  }
  return "?";
}

TableRole table_role_from_string(std::string_view s) {
  for (auto r : {TableRole::ThetaT1, TableRole::ThetaT, TableRole::ThetaO, TableRole::ThetaS,
                 TableRole::ItemSource, TableRole::ItemTarget, TableRole::TransformW,
                 TableRole::TransformB})
    if (to_string(r) == s) return r;
  throw std::invalid_argument("unknown table role '" + std::string(s) + "'");
}

std::string_view to_string(BackboneKind k) { return k == BackboneKind::MF ? "mf" : "lightgcn"; }
std::string_view to_string(LossKind k) { return k == LossKind::BCE ? "bce" : "bpr"; }

BackboneKind backbone_from_string(std::string_view s) {
  if (s == "mf") return BackboneKind::MF;
  if (s == "lightgcn") return BackboneKind::LightGCN;
  throw std::invalid_argument("unknown backbone '" + std::string(s) + "' (expected mf|lightgcn)");
}

LossKind loss_from_string(std::string_view s) {
  if (s == "bce") return LossKind::BCE;
  if (s == "bpr") return LossKind::BPR;
  throw std::invalid_argument("unknown loss '" + std::string(s) + "' (expected bce|bpr)");
}

EmbeddingTable init_embeddings(std::size_t rows, std::size_t dim, std::uint64_t seed,
                               TableRole role, double stddev) {
  if (rows == 0 || dim == 0) throw std::invalid_argument("init_embeddings: empty shape");
  EmbeddingTable t{role, Matrix(rows, dim)};
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, stddev);
  for (auto& x : t.values.data()) x = g(rng);
  return t;
}

// ---------------------------------------------------------------- Parameter

Parameter::Parameter(EmbeddingTable table)
    : role_(table.role),
      value_(std::move(table.values)),
      grad_(value_.rows(), value_.cols()),
      touched_flag_(value_.rows(), 0) {}

void Parameter::add_grad(std::size_t row, std::span<const double> g, double scale) {
  if (!touched_flag_[row]) {
    touched_flag_[row] = 1;
    touched_.push_back(static_cast<std::uint32_t>(row));
  }
  axpy(scale, g, grad_.row(row));
}

void Parameter::zero_grad() {
  for (auto r : touched_) {
    auto g = grad_.row(r);
    std::fill(g.begin(), g.end(), 0.0);
    touched_flag_[r] = 0;
  }
  touched_.clear();
}

// --------------------------------------------------------------------- Adam

Adam::Adam(AdamOptions options, std::vector<Parameter*> params)
    : options_(options), params_(std::move(params)) {
  for (auto* p : params_) moments_.push_back({Matrix(p->rows(), p->dim()), Matrix(p->rows(), p->dim())});
}

void Adam::step() {
  for (auto* p : params_)
    for (auto r : p->touched_rows())
      if (!all_finite(p->grad().row(r)))
        throw std::runtime_error("non-finite gradient in parameter '" + std::string(p->name()) +
                                 "' row " + std::to_string(r));
  ++step_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto* p = params_[k];
    auto& mom = moments_[k];
    // Sorted for a deterministic update order.
    std::vector<std::uint32_t> rows = p->touched_rows();
    std::sort(rows.begin(), rows.end());
    for (auto r : rows) {
      auto theta = p->value().row(r);
      auto g = p->grad().row(r);
      auto m = mom.m.row(r);
      auto v = mom.v.row(r);
      for (std::size_t d = 0; d < theta.size(); ++d) {
        const double gd = g[d] + options_.weight_decay * theta[d];
        m[d] = b1 * m[d] + (1.0 - b1) * gd;
        v[d] = b2 * v[d] + (1.0 - b2) * gd * gd;
        const double mhat = m[d] / c1;
        const double vhat = v[d] / c2;
        theta[d] -= options_.lr * mhat / (std::sqrt(vhat) + options_.eps);
      }
      if (!all_finite(theta))
        throw std::runtime_error("non-finite value in parameter '" + std::string(p->name()) +
                                 "' row " + std::to_string(r) + " after step " +
                                 std::to_string(step_));
    }
    p->zero_grad();
  }
}

// ------------------------------------------------------------------- Graph

BipartiteGraph::BipartiteGraph(const InteractionSet& train, std::size_t layers)
    : n_users_(train.n_users()), n_items_(train.n_items()), layers_(layers) {
  const auto item_deg = train.item_degrees();
  std::vector<std::vector<std::pair<std::uint32_t, double>>> adj(n_nodes());
  for (std::size_t u = 0; u < n_users_; ++u) {
    const auto& row = train.row(u);
    for (auto i : row) {
      const double w =
          1.0 / std::sqrt(static_cast<double>(row.size()) * static_cast<double>(item_deg[i]));
      const auto item_node = static_cast<std::uint32_t>(n_users_ + i);
      adj[u].emplace_back(item_node, w);
      adj[item_node].emplace_back(static_cast<std::uint32_t>(u), w);
    }
  }
  offsets_.push_back(0);
  for (auto& list : adj) {
    std::sort(list.begin(), list.end());
    for (auto& [n, w] : list) {
      neighbors_.push_back(n);
      weights_.push_back(w);
    }
    offsets_.push_back(neighbors_.size());
  }
}

void BipartiteGraph::multiply(const Matrix& in, Matrix& out) const {
  const std::size_t dim = in.cols();
  out = Matrix(n_nodes(), dim);
  for (std::size_t v = 0; v < n_nodes(); ++v) {
    auto dst = out.row(v);
    for (std::size_t e = offsets_[v]; e < offsets_[v + 1]; ++e)
      axpy(weights_[e], in.row(neighbors_[e]), dst);
  }
}

Matrix BipartiteGraph::propagate(const Matrix& base) const {
  if (base.rows() != n_nodes()) throw std::invalid_argument("propagate: node count mismatch");
  const double a = 1.0 / static_cast<double>(layers_ + 1);
  Matrix acc = base;
  Matrix cur = base, next;
  for (std::size_t l = 0; l < layers_; ++l) {
    multiply(cur, next);
    for (std::size_t k = 0; k < acc.size(); ++k) acc.data()[k] += next.data()[k];
    std::swap(cur, next);
  }
  for (auto& x : acc.data()) x *= a;
  return acc;
}

Matrix BipartiteGraph::dense() const {
  Matrix m(n_nodes(), n_nodes());
  for (std::size_t v = 0; v < n_nodes(); ++v)
    for (std::size_t e = offsets_[v]; e < offsets_[v + 1]; ++e) m(v, neighbors_[e]) = weights_[e];
  return m;
}

double BipartiteGraph::weight(std::size_t node, std::size_t neighbor) const {
  auto first = neighbors_.begin() + static_cast<std::ptrdiff_t>(offsets_[node]);
  auto last = neighbors_.begin() + static_cast<std::ptrdiff_t>(offsets_[node + 1]);
  auto it = std::lower_bound(first, last, static_cast<std::uint32_t>(neighbor));
  if (it == last || *it != neighbor) return 0.0;
  return weights_[static_cast<std::size_t>(it - neighbors_.begin())];
}

namespace {

Matrix stack(const Matrix& top, const Matrix& bottom) {
  if (top.cols() != bottom.cols()) throw std::invalid_argument("stack: dim mismatch");
  Matrix out(top.rows() + bottom.rows(), top.cols());
  std::copy(top.data().begin(), top.data().end(), out.data().begin());
  std::copy(bottom.data().begin(), bottom.data().end(),
            out.data().begin() + static_cast<std::ptrdiff_t>(top.size()));
  return out;
}

std::pair<Matrix, Matrix> unstack(const Matrix& m, std::size_t top_rows) {
  Matrix a(top_rows, m.cols()), b(m.rows() - top_rows, m.cols());
  auto mid = m.data().begin() + static_cast<std::ptrdiff_t>(top_rows * m.cols());
  std::copy(m.data().begin(), mid, a.data().begin());
  std::copy(mid, m.data().end(), b.data().begin());
  return {std::move(a), std::move(b)};
}

}  // namespace

std::pair<Matrix, Matrix> lightgcn_propagate(const BipartiteGraph& graph, const Matrix& users,
                                             const Matrix& items) {
  if (users.rows() != graph.n_users() || items.rows() != graph.n_items())
    throw std::invalid_argument("lightgcn_propagate: table sizes do not match the graph");
  return unstack(graph.propagate(stack(users, items)), users.rows());
}

// ------------------------------------------------------------------- Losses

std::vector<std::uint32_t> sample_negatives(const std::vector<std::uint32_t>& train_row,
                                            std::size_t n_items, std::size_t count,
                                            std::mt19937_64& rng) {
  if (count < 1) throw std::invalid_argument("sample_negatives: count must be >= 1");
  if (train_row.size() >= n_items)
    throw std::runtime_error("sample_negatives: user has interacted with every item");
  std::uniform_int_distribution<std::uint32_t> pick(0, static_cast<std::uint32_t>(n_items - 1));
  std::vector<std::uint32_t> out;
  out.reserve(count);
  while (out.size() < count) {
    auto i = pick(rng);
    if (!std::binary_search(train_row.begin(), train_row.end(), i)) out.push_back(i);
  }
  return out;
}

double log_sigmoid(double x) {
  return x >= 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

ScoreLoss bce_loss(std::span<const double> pos, std::span<const double> neg) {
  const std::size_t n = pos.size() + neg.size();
  if (n == 0) throw std::invalid_argument("bce_loss: empty batch");
  ScoreLoss out;
  out.d_pos.resize(pos.size());
  out.d_neg.resize(neg.size());
  const double inv = 1.0 / static_cast<double>(n);
  for (std::size_t k = 0; k < pos.size(); ++k) {
    out.loss -= log_sigmoid(pos[k]);
    out.d_pos[k] = (sigmoid(pos[k]) - 1.0) * inv;
  }
  for (std::size_t k = 0; k < neg.size(); ++k) {
    out.loss -= log_sigmoid(-neg[k]);
    out.d_neg[k] = sigmoid(neg[k]) * inv;
  }
  out.loss *= inv;
  return out;
}

ScoreLoss bpr_loss(std::span<const double> pos, std::span<const double> neg) {
  if (pos.empty() || pos.size() != neg.size())
    throw std::invalid_argument("bpr_loss: expected equal, non-empty score lists");
  ScoreLoss out;
  out.d_pos.resize(pos.size());
  out.d_neg.resize(neg.size());
  const double inv = 1.0 / static_cast<double>(pos.size());
  for (std::size_t k = 0; k < pos.size(); ++k) {
    const double diff = pos[k] - neg[k];
    out.loss -= log_sigmoid(diff);
    const double g = -sigmoid(-diff) * inv;
    out.d_pos[k] = g;
    out.d_neg[k] = -g;
  }
  out.loss *= inv;
  return out;
}

Batch make_batch(std::span<const std::pair<std::uint32_t, std::uint32_t>> interactions,
                 const InteractionSet& train, std::mt19937_64& rng) {
  Batch b;
  b.users.reserve(interactions.size());
  for (auto [u, i] : interactions) {
    b.users.push_back(u);
    b.pos.push_back(i);
    b.neg.push_back(sample_negatives(train.row(u), train.n_items(), 1, rng)[0]);
  }
  return b;
}

// ----------------------------------------------------------------- Encoders

std::size_t TableEncoder::n_users() const {
  return first_.rows() + (second_ ? second_->rows() : 0);
}

void TableEncoder::encode(std::uint32_t user, std::span<double> out) const {
  auto src = user < first_.rows() ? first_.value().row(user)
                                   : second_->value().row(user - first_.rows());
  std::copy(src.begin(), src.end(), out.begin());
}

void TableEncoder::backprop(std::uint32_t user, std::span<const double> grad) {
  if (user < first_.rows())
    first_.add_grad(user, grad);
  else
    second_->add_grad(user - first_.rows(), grad);
}

// --------------------------------------------------------------- DomainPass

DomainPass::DomainPass(UserEncoder& users, Parameter& items, const BipartiteGraph* graph)
    : encoder_(users), items_(items), graph_(graph), dim_(users.dim()) {
  if (items.dim() != dim_) throw std::invalid_argument("DomainPass: user/item dim mismatch");
  if (graph_ && (graph_->n_users() != users.n_users() || graph_->n_items() != items.rows()))
    throw std::invalid_argument("DomainPass: graph does not match tables");
}

void DomainPass::forward(std::span<const std::uint32_t> users) {
  if (graph_) {
    base_ = Matrix(graph_->n_nodes(), dim_);
    const std::size_t nu = graph_->n_users();
    for (std::uint32_t u = 0; u < nu; ++u) encoder_.encode(u, base_.row(u));
    for (std::size_t i = 0; i < items_.rows(); ++i) {
      auto src = items_.value().row(i);
      std::copy(src.begin(), src.end(), base_.row(nu + i).begin());
    }
    final_ = graph_->propagate(base_);
    final_grad_ = Matrix(graph_->n_nodes(), dim_);
    base_user_grad_ = Matrix(nu, dim_);
    return;
  }
  slot_.assign(encoder_.n_users(), -1);
  slot_users_.clear();
  for (auto u : users) {
    if (u >= encoder_.n_users()) throw std::out_of_range("DomainPass: user index out of range");
    if (slot_[u] < 0) {
      slot_[u] = static_cast<std::int32_t>(slot_users_.size());
      slot_users_.push_back(u);
    }
  }
  user0_ = Matrix(slot_users_.size(), dim_);
  user_grad_ = Matrix(slot_users_.size(), dim_);
  for (std::size_t s = 0; s < slot_users_.size(); ++s) encoder_.encode(slot_users_[s], user0_.row(s));
}

std::span<const double> DomainPass::user(std::uint32_t u) const {
  if (graph_) return final_.row(u);
  if (u >= slot_.size() || slot_[u] < 0) throw std::logic_error("DomainPass: user not prepared");
  return user0_.row(static_cast<std::size_t>(slot_[u]));
}

std::span<const double> DomainPass::item(std::uint32_t i) const {
  if (graph_) return final_.row(graph_->n_users() + i);
  return items_.value().row(i);
}

std::span<const double> DomainPass::layer0_user(std::uint32_t u) const {
  if (graph_) return base_.row(u);
  return user(u);
}

void DomainPass::add_user_grad(std::uint32_t u, std::span<const double> g, double scale) {
  if (graph_)
    axpy(scale, g, final_grad_.row(u));
  else
    axpy(scale, g, user_grad_.row(static_cast<std::size_t>(slot_.at(u))));
}

void DomainPass::add_item_grad(std::uint32_t i, std::span<const double> g, double scale) {
  if (graph_)
    axpy(scale, g, final_grad_.row(graph_->n_users() + i));
  else
    items_.add_grad(i, g, scale);
}

void DomainPass::add_layer0_user_grad(std::uint32_t u, std::span<const double> g, double scale) {
  if (graph_)
    axpy(scale, g, base_user_grad_.row(u));
  else
    add_user_grad(u, g, scale);
}

namespace {
bool any_nonzero(std::span<const double> v) {
  return std::any_of(v.begin(), v.end(), [](double x) { return x != 0.0; });
}
}  // namespace

void DomainPass::backward() {
  if (!graph_) {
    for (std::size_t s = 0; s < slot_users_.size(); ++s)
      if (any_nonzero(user_grad_.row(s))) encoder_.backprop(slot_users_[s], user_grad_.row(s));
    return;
  }
  Matrix base_grad = graph_->propagate(final_grad_);
  const std::size_t nu = graph_->n_users();
  for (std::uint32_t u = 0; u < nu; ++u) {
    auto g = base_grad.row(u);
    axpy(1.0, base_user_grad_.row(u), g);
    if (any_nonzero(g)) encoder_.backprop(u, g);
  }
  for (std::size_t i = 0; i < items_.rows(); ++i) {
    auto g = base_grad.row(nu + i);
    if (any_nonzero(g)) items_.add_grad(i, g);
  }
}

double prediction_loss(DomainPass& pass, const Batch& batch, LossKind kind, double weight,
                       bool backward) {
  const std::size_t n = batch.users.size();
  if (n == 0) return 0.0;
  std::vector<double> pos(n), neg(n);
  for (std::size_t k = 0; k < n; ++k) {
    pos[k] = mf_score(pass.user(batch.users[k]), pass.item(batch.pos[k]));
    neg[k] = mf_score(pass.user(batch.users[k]), pass.item(batch.neg[k]));
  }
  ScoreLoss l = kind == LossKind::BCE ? bce_loss(pos, neg) : bpr_loss(pos, neg);
  if (backward && weight != 0.0) {
    for (std::size_t k = 0; k < n; ++k) {
      const auto u = batch.users[k];
      const double gp = weight * l.d_pos[k];
      const double gn = weight * l.d_neg[k];
      pass.add_user_grad(u, pass.item(batch.pos[k]), gp);
      pass.add_user_grad(u, pass.item(batch.neg[k]), gn);
      pass.add_item_grad(batch.pos[k], pass.user(u), gp);
      pass.add_item_grad(batch.neg[k], pass.user(u), gn);
    }
  }
  return l.loss;
}

ScoringSnapshot make_snapshot(Matrix u0, const Parameter& items, const BipartiteGraph* graph) {
  if (!graph) return {std::move(u0), items.value()};
  auto [fu, fi] = lightgcn_propagate(*graph, u0, items.value());
  return {std::move(fu), std::move(fi)};
}

// ------------------------------------------------------------ BackboneModel

BackboneModel::BackboneModel(const InteractionSet& train, std::size_t dim, BackboneKind kind,
                             std::size_t layers, std::uint64_t seed)
    : kind_(kind),
      users_(init_embeddings(train.n_users(), dim, derive_seed(seed, 11), TableRole::ThetaT1)),
      items_(init_embeddings(train.n_items(), dim, derive_seed(seed, 12), TableRole::ItemTarget)) {
  if (kind == BackboneKind::LightGCN) graph_ = std::make_shared<BipartiteGraph>(train, layers);
}

double BackboneModel::forward_backward(const Batch& batch, LossKind loss, bool backward) {
  TableEncoder enc(users_);
  DomainPass pass(enc, items_, graph_.get());
  pass.forward(batch.users);
  const double l = prediction_loss(pass, batch, loss, 1.0, backward);
  if (backward) pass.backward();
  return l;
}

ScoringSnapshot BackboneModel::snapshot() const {
  return make_snapshot(users_.value(), items_, graph_.get());
}

LossBreakdown train_step_single_domain(
    BackboneModel& model, Adam& optimizer,
    std::span<const std::pair<std::uint32_t, std::uint32_t>> batch, const InteractionSet& train,
    LossKind loss, std::mt19937_64& rng) {
  if (batch.empty()) throw std::invalid_argument("train_step_single_domain: empty batch");
  Batch b = make_batch(batch, train, rng);
  LossBreakdown out;
  out.target = model.forward_backward(b, loss);
  out.total = out.target;
  optimizer.step();
  return out;
}

}  // namespace cutrec
