#include "cutrec/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace cutrec {

std::vector<std::uint32_t> rank_items(const ScoringSnapshot& model, std::uint32_t user,
                                      const std::vector<std::uint32_t>& mask, std::size_t k) {
  if (user >= model.users.rows()) throw std::out_of_range("rank_items: user out of range");
  auto u = model.users.row(user);
  std::vector<std::pair<double, std::uint32_t>> cand;
  cand.reserve(model.items.rows());
  auto m = mask.begin();
  for (std::uint32_t i = 0; i < model.items.rows(); ++i) {
    while (m != mask.end() && *m < i) ++m;
    if (m != mask.end() && *m == i) continue;
    cand.emplace_back(mf_score(u, model.items.row(i)), i);
  }
  const std::size_t take = std::min(k, cand.size());
  std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(take), cand.end(),
                    [](const auto& a, const auto& b) {
                      return a.first != b.first ? a.first > b.first : a.second < b.second;
                    });
  std::vector<std::uint32_t> out(take);
  for (std::size_t r = 0; r < take; ++r) out[r] = cand[r].second;
  return out;
}

namespace {

bool in(const std::vector<std::uint32_t>& sorted, std::uint32_t x) {
  return std::binary_search(sorted.begin(), sorted.end(), x);
}

std::size_t hits(std::span<const std::uint32_t> topk, const std::vector<std::uint32_t>& test,
                 std::size_t k) {
  std::size_t h = 0;
  for (std::size_t r = 0; r < std::min(k, topk.size()); ++r) h += in(test, topk[r]);
  return h;
}

}  // namespace

double ndcg_at_k(std::span<const std::uint32_t> topk, const std::vector<std::uint32_t>& test,
                 std::size_t k) {
  if (k < 1) throw std::invalid_argument("ndcg_at_k: K must be >= 1");
  if (test.empty()) throw std::invalid_argument("ndcg_at_k: empty test set");
  double dcg = 0.0, idcg = 0.0;
  for (std::size_t r = 0; r < std::min(k, topk.size()); ++r)
    if (in(test, topk[r])) dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  for (std::size_t r = 0; r < std::min(k, test.size()); ++r)
    idcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  return dcg / idcg;
}

double recall_at_k(std::span<const std::uint32_t> topk, const std::vector<std::uint32_t>& test,
                   std::size_t k) {
  if (k < 1) throw std::invalid_argument("recall_at_k: K must be >= 1");
  if (test.empty()) throw std::invalid_argument("recall_at_k: empty test set");
  return static_cast<double>(hits(topk, test, k)) / static_cast<double>(test.size());
}

double hr_at_k(std::span<const std::uint32_t> topk, const std::vector<std::uint32_t>& test,
               std::size_t k) {
  if (k < 1) throw std::invalid_argument("hr_at_k: K must be >= 1");
  return hits(topk, test, k) > 0 ? 1.0 : 0.0;
}

namespace {

MetricSummary summarize(const std::vector<double>& xs) {
  MetricSummary s;
  if (xs.empty()) return s;
  for (double x : xs) s.mean += x;
  s.mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(var / static_cast<double>(xs.size()));
  return s;
}

std::vector<std::uint32_t> merge(const std::vector<std::uint32_t>& a,
                                 const std::vector<std::uint32_t>& b) {
  std::vector<std::uint32_t> out;
  out.reserve(a.size() + b.size());
  std::merge(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

}  // namespace

MetricsReport evaluate_full(const ScoringSnapshot& model, const SplitDataset& split,
                            const EvalOptions& options) {
  const InteractionSet& held = options.target == EvalTarget::Test ? split.test : split.valid;
  std::vector<double> ndcg, hr, recall;
  const std::vector<std::uint32_t> none;
  for (std::uint32_t u = 0; u < held.n_users(); ++u) {
    const auto& truth = held.row(u);
    if (truth.empty()) continue;
    std::vector<std::uint32_t> mask;
    if (options.mask_seen)
      mask = options.target == EvalTarget::Test ? merge(split.train.row(u), split.valid.row(u))
                                                : split.train.row(u);
    auto top = rank_items(model, u, mask, options.k);
    ndcg.push_back(ndcg_at_k(top, truth, options.k));
    hr.push_back(hr_at_k(top, truth, options.k));
    recall.push_back(recall_at_k(top, truth, options.k));
  }
  if (ndcg.empty()) throw std::runtime_error("evaluate_full: no users with held-out items");
  MetricsReport r;
  r.k = options.k;
  r.users = ndcg.size();
  r.metrics["ndcg"] = summarize(ndcg);
  r.metrics["hr"] = summarize(hr);
  r.metrics["recall"] = summarize(recall);
  return r;
}

MetricsReport aggregate_seeds(const std::vector<MetricsReport>& runs) {
  if (runs.empty()) throw std::invalid_argument("aggregate_seeds: no runs");
  MetricsReport r;
  r.k = runs.front().k;
  r.users = runs.front().users;
  for (const auto& [name, _] : runs.front().metrics) {
    std::vector<double> means;
    for (const auto& run : runs) means.push_back(run.mean(name));
    r.metrics[name] = summarize(means);
  }
  return r;
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [name, s] : metrics) j[name] = {{"mean", s.mean}, {"std", s.std}};
  j["K"] = k;
  j["users"] = users;
  j["seed"] = seed ? nlohmann::json(*seed) : nlohmann::json(nullptr);
  return j;
}

std::string MetricsReport::to_text() const {
  std::ostringstream os;
  os << std::left << std::setw(12) << "metric" << std::right << std::setw(12) << "mean"
     << std::setw(12) << "std" << '\n';
  for (const auto& [name, s] : metrics)
    os << std::left << std::setw(12) << (name + "@" + std::to_string(k)) << std::right
       << std::fixed << std::setprecision(6) << std::setw(12) << s.mean << std::setw(12) << s.std
       << '\n';
  os << "users=" << users;
  if (seed) os << " seed=" << *seed;
  os << '\n';
  return os.str();
}

}  // namespace cutrec
