#include "cutrec/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

namespace cutrec {

void SynthConfig::validate() const {
  if (n_users == 0 || n_items_per_domain == 0 || latent_dim == 0 || interactions_per_user == 0 ||
      n_clusters == 0)
    throw std::invalid_argument("synth: counts must be positive");
  if (interactions_per_user > n_items_per_domain ||
      source_interactions_per_user > n_items_per_domain)
    throw std::invalid_argument("synth: interactions_per_user exceeds n_items_per_domain");
  if (!(overlap_fraction >= 0.0 && overlap_fraction <= 1.0))
    throw std::invalid_argument("synth: overlap_fraction must be in [0, 1]");
  if (!(distortion >= 0.0 && distortion <= 1.0))
    throw std::invalid_argument("synth: distortion must be in [0, 1]");
  if (cluster_spread < 0.0 || noise < 0.0 || popularity_skew < 0.0)
    throw std::invalid_argument("synth: spread, noise and skew must be non-negative");
}

namespace {

void normalize(std::span<double> v) {
  double n = norm(v);
  if (n == 0.0) {
    v[0] = 1.0;
    return;
  }
  for (auto& x : v) x /= n;
}

void draw_sphere(std::span<double> v, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  for (auto& x : v) x = g(rng);
  normalize(v);
}

class LatentSampler {
 public:
  LatentSampler(const SynthConfig& cfg, std::mt19937_64& rng)
      : cfg_(cfg), centers_(cfg.n_clusters, cfg.latent_dim) {
    for (std::size_t c = 0; c < cfg.n_clusters; ++c) draw_sphere(centers_.row(c), rng);
  }

  // Draws a factor around a uniformly chosen cluster; returns the cluster.
  std::size_t draw(std::span<double> out, std::mt19937_64& rng) const {
    std::uniform_int_distribution<std::size_t> pick(0, cfg_.n_clusters - 1);
    std::normal_distribution<double> g(0.0, 1.0);
    std::size_t c = pick(rng);
    const double scale = cfg_.cluster_spread / std::sqrt(static_cast<double>(cfg_.latent_dim));
    auto center = centers_.row(c);
    for (std::size_t d = 0; d < out.size(); ++d) out[d] = center[d] + scale * g(rng);
    normalize(out);
    return c;
  }

 private:
  const SynthConfig& cfg_;
  Matrix centers_;
};

Matrix draw_items(const SynthConfig& cfg, std::mt19937_64& rng) {
  Matrix items(cfg.n_items_per_domain, cfg.latent_dim);
  for (std::size_t i = 0; i < items.rows(); ++i) draw_sphere(items.row(i), rng);
  return items;
}

std::vector<double> popularity_bias(const SynthConfig& cfg, std::mt19937_64& rng) {
  std::vector<double> bias(cfg.n_items_per_domain, 0.0);
  if (cfg.popularity_skew == 0.0) return bias;
  std::vector<std::size_t> rank(bias.size());
  std::iota(rank.begin(), rank.end(), 0);
  std::shuffle(rank.begin(), rank.end(), rng);
  for (std::size_t i = 0; i < bias.size(); ++i)
    bias[i] = -cfg.popularity_skew * std::log(static_cast<double>(rank[i]) + 1.0);
  return bias;
}

std::string padded(const std::string& prefix, std::size_t k) {
  std::string digits = std::to_string(k);
  return prefix + std::string(digits.size() < 5 ? 5 - digits.size() : 0, '0') + digits;
}

void emit(RawInteractions& raw, const std::string& user, std::span<const double> factor,
          const Matrix& items, const std::vector<double>& bias, const std::string& item_prefix,
          std::size_t count, double noise, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unif(std::numeric_limits<double>::min(), 1.0);
  std::vector<std::pair<double, std::uint32_t>> scored(items.rows());
  for (std::size_t i = 0; i < items.rows(); ++i) {
    double gumbel = -std::log(-std::log(unif(rng)));
    scored[i] = {dot(factor, items.row(i)) + bias[i] + noise * gumbel,
                 static_cast<std::uint32_t>(i)};
  }
  std::partial_sort(scored.begin(), scored.begin() + count, scored.end(),
                    [](const auto& a, const auto& b) {
                      return a.first != b.first ? a.first > b.first : a.second < b.second;
                    });
  std::vector<std::uint32_t> chosen;
  for (std::size_t k = 0; k < count; ++k) chosen.push_back(scored[k].second);
  std::sort(chosen.begin(), chosen.end());
  for (auto i : chosen) raw.records.push_back({user, padded(item_prefix, i), std::nullopt});
}

}  // namespace

std::vector<double> item_scores(std::span<const double> user, const Matrix& items) {
  std::vector<double> s(items.rows());
  for (std::size_t i = 0; i < items.rows(); ++i) s[i] = dot(user, items.row(i));
  return s;
}

SynthOutput generate_detailed(const SynthConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  LatentSampler source_sampler(cfg, rng);
  LatentSampler target_sampler(cfg, rng);
  const std::size_t dim = cfg.latent_dim;
  const std::size_t n = cfg.n_users;
  const auto n_overlap =
      static_cast<std::size_t>(std::llround(cfg.overlap_fraction * static_cast<double>(n)));

  SynthOutput out;
  out.n_overlap = n_overlap;
  out.source.domain = Domain::Source;
  out.target.domain = Domain::Target;
  out.source_item_factors = draw_items(cfg, rng);
  out.target_item_factors = cfg.share_item_factors ? out.source_item_factors : draw_items(cfg, rng);
  out.source_user_factors = Matrix(n, dim);
  out.target_user_factors = Matrix(n, dim);
  out.source_clusters.resize(n);
  out.target_clusters.resize(n);

  auto token = [](char prefix, std::size_t k) { return padded(std::string(1, prefix), k); };

  std::vector<double> fresh(dim);
  for (std::size_t u = 0; u < n; ++u) {
    const bool shared = u < n_overlap;
    out.source_user_tokens.push_back(shared ? token('o', u) : token('s', u));
    out.target_user_tokens.push_back(shared ? token('o', u) : token('t', u));
    auto zs = out.source_user_factors.row(u);
    auto zt = out.target_user_factors.row(u);
    out.source_clusters[u] = source_sampler.draw(zs, rng);
    out.target_clusters[u] = target_sampler.draw(fresh, rng);
    if (shared) {
      for (std::size_t d = 0; d < dim; ++d)
        zt[d] = (1.0 - cfg.distortion) * zs[d] + cfg.distortion * fresh[d];
      normalize(zt);
      if (cfg.distortion < 0.5) out.target_clusters[u] = out.source_clusters[u];
    } else {
      std::copy(fresh.begin(), fresh.end(), zt.begin());
    }
  }

  const auto source_bias = popularity_bias(cfg, rng);
  const auto target_bias = popularity_bias(cfg, rng);
  const std::size_t source_count =
      cfg.source_interactions_per_user ? cfg.source_interactions_per_user : cfg.interactions_per_user;
  for (std::size_t u = 0; u < n; ++u) {
    emit(out.source, out.source_user_tokens[u], out.source_user_factors.row(u),
         out.source_item_factors, source_bias, "si", source_count, cfg.noise, rng);
    emit(out.target, out.target_user_tokens[u], out.target_user_factors.row(u),
         out.target_item_factors, target_bias, "ti", cfg.interactions_per_user, cfg.noise, rng);
  }
  return out;
}

std::pair<RawInteractions, RawInteractions> generate(const SynthConfig& cfg) {
  auto out = generate_detailed(cfg);
  return {std::move(out.source), std::move(out.target)};
}

}  // namespace cutrec
