#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "cutrec/corpus.hpp"
#include "cutrec/linalg.hpp"

namespace cutrec {

// a.b / (|a||b|); 0 when either vector is all-zero.
double cosine(std::span<const double> a, std::span<const double> b);

enum class SimilarityMode { Embedding, History };

// Binary user-user similarity over target-domain users, answered on demand
// from frozen representations. Never materializes the n x n matrix.
class SimilarityOracle {
 public:
  static SimilarityOracle from_embeddings(Matrix frozen, double gamma = 0.9);
  // Uses the rows of a TRAIN interaction set.
  static SimilarityOracle from_history(const InteractionSet& train, double gamma = 0.9);

  SimilarityMode mode() const { return mode_; }
  double gamma() const { return gamma_; }
  std::size_t n_users() const;
  const Matrix& embeddings() const { return embeddings_; }

  double cosine_between(std::size_t p, std::size_t q) const;
  // cosine(rep_p, rep_q) > gamma, strictly.
  bool similar(std::size_t p, std::size_t q) const;

 private:
  SimilarityOracle(SimilarityMode mode, double gamma) : mode_(mode), gamma_(gamma) {}
  void check(std::size_t p) const;

  SimilarityMode mode_;
  double gamma_;
  Matrix embeddings_;
  std::vector<double> norms_;
  InteractionSet history_;
};

// In-batch pair sets over distinct users. Pairs are ordered and hold local
// indices into `users`; all-pairs is implicit (every ordered x != y).
struct PairSets {
  std::vector<std::uint32_t> users;  // distinct, first-occurrence order
  std::vector<std::pair<std::uint32_t, std::uint32_t>> similar;

  std::size_t all_count() const { return users.size() < 2 ? 0 : users.size() * (users.size() - 1); }
  std::vector<std::pair<std::uint32_t, std::uint32_t>> all_pairs() const;
};

PairSets extract_pairs(std::span<const std::uint32_t> batch_users, const SimilarityOracle& oracle);

}  // namespace cutrec
