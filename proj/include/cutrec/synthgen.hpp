#pragma once

#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

#include "cutrec/corpus.hpp"
#include "cutrec/linalg.hpp"

namespace cutrec {

// Paired-domain generator. Each domain has `n_users` users of which
// round(overlap_fraction * n_users) are shared. Users sit around one of
// `n_clusters` centers on the unit sphere, drawn separately per domain;
// `distortion` interpolates an
// overlapping user's target factor from its source factor (0) to an
// independent draw with an independent cluster (1).
struct SynthConfig {
  std::size_t n_users = 500;
  std::size_t n_items_per_domain = 300;
  std::size_t latent_dim = 16;
  double overlap_fraction = 0.5;
  double distortion = 0.0;
  std::size_t interactions_per_user = 20;
  // 0 means "same as interactions_per_user".
  std::size_t source_interactions_per_user = 0;
  std::uint64_t seed = 0;
  std::size_t n_clusters = 8;
  // Std of the per-user offset from its cluster center (before normalization).
  double cluster_spread = 0.5;
  // Scale of the Gumbel noise added to scores before top-k selection.
  double noise = 0.05;
  // Zipf-style item popularity bias: score += -skew * log(rank + 1).
  double popularity_skew = 0.0;
  // Use one item factor matrix for both domains (item j <-> item j).
  bool share_item_factors = false;

  void validate() const;
};

struct SynthOutput {
  RawInteractions source;
  RawInteractions target;
  // Rows follow the token order of each domain's users: overlapping users
  // "o<k>" first, then the domain's own users.
  Matrix source_user_factors;
  Matrix target_user_factors;
  Matrix source_item_factors;
  Matrix target_item_factors;
  std::vector<std::size_t> source_clusters;
  // For overlapping users this is the source cluster while distortion < 0.5,
  // otherwise the cluster of the fresh draw.
  std::vector<std::size_t> target_clusters;
  std::vector<std::string> source_user_tokens;
  std::vector<std::string> target_user_tokens;
  std::size_t n_overlap = 0;
};

SynthOutput generate_detailed(const SynthConfig& cfg);
std::pair<RawInteractions, RawInteractions> generate(const SynthConfig& cfg);

// Noise-free affinity of every item for one user factor.
std::vector<double> item_scores(std::span<const double> user, const Matrix& items);

}  // namespace cutrec
