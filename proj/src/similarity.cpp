#include "cutrec/similarity.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_set>

namespace cutrec {

double cosine(std::span<const double> a, std::span<const double> b) {
  const double na = norm(a), nb = norm(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot(a, b) / (na * nb);
}

SimilarityOracle SimilarityOracle::from_embeddings(Matrix frozen, double gamma) {
  if (!(gamma > -1.0 && gamma <= 1.0)) throw std::invalid_argument("similarity: gamma must be in (-1, 1]");
  SimilarityOracle o(SimilarityMode::Embedding, gamma);
  o.norms_.resize(frozen.rows());
  for (std::size_t u = 0; u < frozen.rows(); ++u) o.norms_[u] = norm(frozen.row(u));
  o.embeddings_ = std::move(frozen);
  return o;
}

SimilarityOracle SimilarityOracle::from_history(const InteractionSet& train, double gamma) {
  if (!(gamma > -1.0 && gamma <= 1.0)) throw std::invalid_argument("similarity: gamma must be in (-1, 1]");
  SimilarityOracle o(SimilarityMode::History, gamma);
  o.history_ = train;
  return o;
}

std::size_t SimilarityOracle::n_users() const {
  return mode_ == SimilarityMode::Embedding ? embeddings_.rows() : history_.n_users();
}

void SimilarityOracle::check(std::size_t p) const {
  if (p >= n_users())
    throw std::out_of_range("similarity: user " + std::to_string(p) + " outside target range [0, " +
                            std::to_string(n_users()) + ")");
}

double SimilarityOracle::cosine_between(std::size_t p, std::size_t q) const {
  check(p);
  check(q);
  if (mode_ == SimilarityMode::Embedding) {
    const double d = norms_[p] * norms_[q];
    if (d == 0.0) return 0.0;
    return dot(embeddings_.row(p), embeddings_.row(q)) / d;
  }
  // Binary rows: |a & b| / sqrt(|a| |b|).
  const auto& a = history_.row(p);
  const auto& b = history_.row(q);
  if (a.empty() || b.empty()) return 0.0;
  std::size_t common = 0;
  for (std::size_t i = 0, j = 0; i < a.size() && j < b.size();) {
    if (a[i] == b[j]) {
      ++common;
      ++i;
      ++j;
    } else if (a[i] < b[j]) {
      ++i;
    } else {
      ++j;
    }
  }
  return static_cast<double>(common) /
         std::sqrt(static_cast<double>(a.size()) * static_cast<double>(b.size()));
}

bool SimilarityOracle::similar(std::size_t p, std::size_t q) const {
  return cosine_between(p, q) > gamma_;
}

std::vector<std::pair<std::uint32_t, std::uint32_t>> PairSets::all_pairs() const {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> out;
  out.reserve(all_count());
  const auto u = static_cast<std::uint32_t>(users.size());
  for (std::uint32_t x = 0; x < u; ++x)
    for (std::uint32_t y = 0; y < u; ++y)
      if (x != y) out.emplace_back(x, y);
  return out;
}

PairSets extract_pairs(std::span<const std::uint32_t> batch_users, const SimilarityOracle& oracle) {
  PairSets out;
  std::unordered_set<std::uint32_t> seen;
  for (auto u : batch_users)
    if (seen.insert(u).second) out.users.push_back(u);
  const auto n = static_cast<std::uint32_t>(out.users.size());
  if (n < 2) return out;
  for (std::uint32_t x = 0; x < n; ++x)
    for (std::uint32_t y = x + 1; y < n; ++y)
      if (oracle.similar(out.users[x], out.users[y])) {
        out.similar.emplace_back(x, y);
        out.similar.emplace_back(y, x);
      }
  return out;
}

}  // namespace cutrec
