#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cutrec/backbone.hpp"
#include "cutrec/corpus.hpp"
#include "json.hpp"

namespace cutrec {

// Top-K items for `user` by descending score, ties by ascending index.
// `mask` (sorted) items are never returned. Returns fewer than K when fewer
// unmasked items exist.
std::vector<std::uint32_t> rank_items(const ScoringSnapshot& model, std::uint32_t user,
                                      const std::vector<std::uint32_t>& mask, std::size_t k);

// `test` must be sorted.
double ndcg_at_k(std::span<const std::uint32_t> topk, const std::vector<std::uint32_t>& test,
                 std::size_t k = 10);
double recall_at_k(std::span<const std::uint32_t> topk, const std::vector<std::uint32_t>& test,
                   std::size_t k = 10);
double hr_at_k(std::span<const std::uint32_t> topk, const std::vector<std::uint32_t>& test,
               std::size_t k = 10);

struct MetricSummary {
  double mean = 0.0;
  double std = 0.0;
};

struct MetricsReport {
  std::size_t k = 10;
  std::size_t users = 0;
  std::optional<std::uint64_t> seed;
  std::map<std::string, MetricSummary> metrics;  // "ndcg", "hr", "recall"

  double mean(const std::string& metric) const { return metrics.at(metric).mean; }
  nlohmann::json to_json() const;
  std::string to_text() const;
};

enum class EvalTarget { Test, Valid };

struct EvalOptions {
  std::size_t k = 10;
  // Mask train (+ valid when scoring test) items from the ranking.
  bool mask_seen = true;
  EvalTarget target = EvalTarget::Test;
};

// Mean and population std over users with at least one held-out item.
MetricsReport evaluate_full(const ScoringSnapshot& model, const SplitDataset& split,
                            const EvalOptions& options = {});

// Mean/std of each metric's per-seed means.
MetricsReport aggregate_seeds(const std::vector<MetricsReport>& runs);

}  // namespace cutrec
