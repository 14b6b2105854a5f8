#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include "cutrec/similarity.hpp"
#include "cutrec/synthgen.hpp"
#include "testing.hpp"

using namespace cutrec;

namespace {

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    sab += (a[k] - ma) * (b[k] - mb);
    saa += (a[k] - ma) * (a[k] - ma);
    sbb += (b[k] - mb) * (b[k] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

// Item sets per user token, with the domain prefix stripped so that item
// j of either domain maps to the same key.
std::map<std::string, std::set<std::string>> histories(const RawInteractions& r) {
  std::map<std::string, std::set<std::string>> out;
  for (auto& rec : r.records) out[rec.user].insert(rec.item.substr(2));
  return out;
}

SynthConfig tiny(std::uint64_t seed) {
  SynthConfig c;
  c.n_users = 30;
  c.n_items_per_domain = 60;
  c.latent_dim = 8;
  c.interactions_per_user = 10;
  c.seed = seed;
  return c;
}

}  // namespace

TEST_CASE("synth: overlap count and per-user interaction counts") {
  auto c = tiny(1);
  c.n_users = 100;
  c.overlap_fraction = 0.5;
  c.source_interactions_per_user = 12;
  auto out = generate_detailed(c);
  CHECK(out.n_overlap == 50);
  std::set<std::string> src, tgt, both;
  for (auto& r : out.source.records) src.insert(r.user);
  for (auto& r : out.target.records) tgt.insert(r.user);
  std::set_intersection(src.begin(), src.end(), tgt.begin(), tgt.end(),
                        std::inserter(both, both.begin()));
  CHECK(both.size() == 50);
  for (auto& [u, items] : histories(out.source)) CHECK(items.size() == 12);
  for (auto& [u, items] : histories(out.target)) CHECK(items.size() == 10);
}

TEST_CASE("synth: deterministic under seed") {
  auto a = generate(tiny(9));
  auto b = generate(tiny(9));
  CHECK(histories(a.first) == histories(b.first));
  CHECK(histories(a.second) == histories(b.second));
  auto c = generate(tiny(10));
  CHECK_FALSE(histories(a.second) == histories(c.second));
}

TEST_CASE("synth: zero distortion with shared items gives identical rankings") {
  auto c = tiny(4);
  c.distortion = 0.0;
  c.share_item_factors = true;
  c.noise = 0.0;
  c.overlap_fraction = 1.0;
  auto out = generate_detailed(c);
  for (std::size_t u = 0; u < out.n_overlap; ++u) {
    auto s = item_scores(out.source_user_factors.row(u), out.source_item_factors);
    auto t = item_scores(out.target_user_factors.row(u), out.target_item_factors);
    std::vector<std::size_t> rs(s.size()), rt(t.size());
    std::iota(rs.begin(), rs.end(), 0);
    std::iota(rt.begin(), rt.end(), 0);
    std::sort(rs.begin(), rs.end(), [&](auto a, auto b) { return s[a] > s[b]; });
    std::sort(rt.begin(), rt.end(), [&](auto a, auto b) { return t[a] > t[b]; });
    CHECK(rs == rt);
  }
  auto hs = histories(out.source);
  auto ht = histories(out.target);
  for (auto& [u, items] : hs) CHECK(ht.at(u) == items);
}

TEST_CASE("synth: full distortion decorrelates source and target scores") {
  double sum = 0.0;
  std::size_t count = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto c = tiny(seed);
    c.distortion = 1.0;
    c.share_item_factors = true;
    auto out = generate_detailed(c);
    for (std::size_t u = 0; u < out.n_overlap; ++u) {
      sum += pearson(item_scores(out.source_user_factors.row(u), out.source_item_factors),
                     item_scores(out.target_user_factors.row(u), out.target_item_factors));
      ++count;
    }
  }
  CHECK(std::abs(sum / static_cast<double>(count)) < 0.05);
}

TEST_CASE("synth: history overlap shrinks as distortion grows") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    double prev = 2.0;
    for (double delta : {0.0, 0.5, 1.0}) {
      auto c = tiny(seed);
      c.n_users = 80;
      c.distortion = delta;
      c.share_item_factors = true;
      auto out = generate_detailed(c);
      auto hs = histories(out.source);
      auto ht = histories(out.target);
      double total = 0.0;
      for (std::size_t u = 0; u < out.n_overlap; ++u) {
        const auto& tok = out.source_user_tokens[u];
        const auto& a = hs.at(tok);
        const auto& b = ht.at(tok);
        std::vector<std::string> common;
        std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(common));
        total += static_cast<double>(common.size()) /
                 std::sqrt(static_cast<double>(a.size() * b.size()));
      }
      const double mean = total / static_cast<double>(out.n_overlap);
      CHECK(mean <= prev);
      prev = mean;
    }
  }
}

TEST_CASE("synth: config validation") {
  auto c = tiny(0);
  c.distortion = 1.5;
  CHECK_THROWS(generate(c));
  c = tiny(0);
  c.interactions_per_user = c.n_items_per_domain + 1;
  CHECK_THROWS(generate(c));
  c = tiny(0);
  c.n_users = 0;
  CHECK_THROWS(generate(c));
}

TEST_CASE("cosine examples") {
  std::vector<double> a{1, 1}, x{1, 0}, y{0, 1}, z{0, 0};
  CHECK(cosine(a, a) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(cosine(x, y) == 0.0);
  CHECK(cosine(a, x) == doctest::Approx(0.70710678).epsilon(1e-8));
  CHECK(cosine(z, x) == 0.0);
}

TEST_CASE("similar: threshold is strict") {
  Matrix e(3, 2);
  e(0, 0) = 1.0;
  e(1, 0) = 0.6;
  e(1, 1) = 0.8;
  e(2, 0) = 0.95;
  e(2, 1) = std::sqrt(1 - 0.95 * 0.95);
  auto at = [&](double gamma) { return SimilarityOracle::from_embeddings(e, gamma); };
  const double c01 = at(0.9).cosine_between(0, 1);
  CHECK(c01 == 0.6);
  CHECK_FALSE(at(0.6).similar(0, 1));
  CHECK(at(std::nextafter(0.6, 0.0)).similar(0, 1));
  CHECK(at(0.9).similar(0, 2));  // cosine 0.95
  // Strictness against whatever the oracle computes, for every pair.
  for (std::size_t p = 0; p < 3; ++p)
    for (std::size_t q = 0; q < 3; ++q) {
      if (p == q) continue;
      const double c = at(0.0).cosine_between(p, q);
      CHECK_FALSE(at(c).similar(p, q));
    }
}

TEST_CASE("similar: history mode and range checks") {
  InteractionSet train(3, 5, {{0, 2, 4}, {0, 2, 4}, {1}});
  auto o = SimilarityOracle::from_history(train, 0.999);
  CHECK(o.mode() == SimilarityMode::History);
  CHECK(o.similar(0, 1));
  CHECK_FALSE(o.similar(0, 2));
  CHECK_THROWS(o.similar(0, 3));
  CHECK_THROWS(SimilarityOracle::from_history(train, -1.0));
  CHECK_THROWS(SimilarityOracle::from_history(train, 1.5));
  // A user with no train items has cosine 0 to everyone.
  InteractionSet cold(2, 3, {{}, {1}});
  CHECK(SimilarityOracle::from_history(cold, 0.5).cosine_between(0, 1) == 0.0);
  CHECK_FALSE(SimilarityOracle::from_history(cold, 0.0).similar(0, 1));
}

TEST_CASE("extract_pairs examples") {
  Matrix e(3, 2);
  e(0, 0) = 1;
  e(1, 0) = 1;
  e(1, 1) = 0.01;
  e(2, 1) = 1;
  auto o = SimilarityOracle::from_embeddings(e, 0.9);
  std::vector<std::uint32_t> dup{1, 1, 2};
  auto p = extract_pairs(dup, o);
  CHECK(p.users == std::vector<std::uint32_t>{1, 2});
  CHECK(p.all_count() == 2);
  CHECK(p.similar.empty());

  std::vector<std::uint32_t> three{0, 1, 2};
  p = extract_pairs(three, o);
  CHECK(p.all_count() == 6);
  CHECK(p.all_pairs().size() == 6);
  using P = std::pair<std::uint32_t, std::uint32_t>;
  std::set<P> got(p.similar.begin(), p.similar.end());
  CHECK(got == std::set<P>{{0, 1}, {1, 0}});

  std::vector<std::uint32_t> one{2, 2};
  p = extract_pairs(one, o);
  CHECK(p.all_count() == 0);
  CHECK(p.similar.empty());
}

TEST_CASE("extract_pairs equals a materialized similarity matrix") {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> g;
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t n = 50;
    Matrix e(n, 4);
    for (auto& v : e.data()) v = g(rng);
    auto train = testing::random_interactions(n, 12, 3, rng);
    for (const auto& o : {SimilarityOracle::from_embeddings(e, 0.5),
                          SimilarityOracle::from_history(train, 0.3)}) {
      // Dense n x n matrix computed directly from the representations.
      std::vector<std::vector<bool>> full(n, std::vector<bool>(n));
      for (std::size_t p = 0; p < n; ++p)
        for (std::size_t q = 0; q < n; ++q) {
          std::vector<double> a(o.mode() == SimilarityMode::Embedding ? 4 : 12),
              b(a.size());
          if (o.mode() == SimilarityMode::Embedding) {
            std::copy(e.row(p).begin(), e.row(p).end(), a.begin());
            std::copy(e.row(q).begin(), e.row(q).end(), b.begin());
          } else {
            for (auto i : train.row(p)) a[i] = 1;
            for (auto i : train.row(q)) b[i] = 1;
          }
          double ab = 0, aa = 0, bb = 0;
          for (std::size_t d = 0; d < a.size(); ++d) ab += a[d] * b[d], aa += a[d] * a[d], bb += b[d] * b[d];
          full[p][q] = ab / std::sqrt(aa * bb) > o.gamma();
        }
      std::uniform_int_distribution<std::uint32_t> pick(0, n - 1);
      std::vector<std::uint32_t> batch(40);
      for (auto& u : batch) u = pick(rng);
      auto pairs = extract_pairs(batch, o);
      std::set<std::uint32_t> distinct(batch.begin(), batch.end());
      CHECK(pairs.users.size() == distinct.size());
      std::set<std::pair<std::uint32_t, std::uint32_t>> got, expect;
      for (auto [x, y] : pairs.similar) got.emplace(pairs.users[x], pairs.users[y]);
      for (auto p : distinct)
        for (auto q : distinct)
          if (p != q && full[p][q]) expect.emplace(p, q);
      CHECK(got == expect);
      for (auto [p, q] : got) CHECK(got.count({q, p}) == 1);
    }
  }
}

TEST_CASE("similarity is invariant to positive row scaling") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> scale(0.01, 100.0);
  Matrix e(20, 5);
  for (auto& v : e.data()) v = g(rng);
  Matrix s = e;
  for (std::size_t u = 0; u < s.rows(); ++u) {
    const double k = scale(rng);
    for (auto& v : s.row(u)) v *= k;
  }
  auto a = SimilarityOracle::from_embeddings(e, 0.2);
  auto b = SimilarityOracle::from_embeddings(s, 0.2);
  for (std::size_t p = 0; p < 20; ++p)
    for (std::size_t q = 0; q < 20; ++q)
      if (p != q) CHECK(a.similar(p, q) == b.similar(p, q));
}
