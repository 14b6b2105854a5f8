#include <doctest.h>

#include <filesystem>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "cutrec/corpus.hpp"
#include "testing.hpp"

using namespace cutrec;

namespace {

RawInteractions parse(const std::string& text, Domain d = Domain::Target) {
  std::istringstream in(text);
  return parse_interactions(in, d);
}

// Repeatedly drops sub-threshold users and items, one entity kind at a time.
std::set<std::pair<std::string, std::string>> brute_k_core(
    std::set<std::pair<std::string, std::string>> pairs, std::size_t k) {
  for (;;) {
    std::map<std::string, std::size_t> ucount, icount;
    for (auto& [u, i] : pairs) ++ucount[u], ++icount[i];
    std::set<std::pair<std::string, std::string>> next;
    for (auto& p : pairs)
      if (ucount[p.first] >= k && icount[p.second] >= k) next.insert(p);
    if (next == pairs) return pairs;
    pairs = std::move(next);
  }
}

std::set<std::pair<std::string, std::string>> as_set(const RawInteractions& r) {
  std::set<std::pair<std::string, std::string>> out;
  for (auto& rec : r.records) out.emplace(rec.user, rec.item);
  return out;
}

RawInteractions from_pairs(const std::set<std::pair<std::string, std::string>>& pairs,
                           Domain d = Domain::Target) {
  RawInteractions r;
  r.domain = d;
  for (auto& [u, i] : pairs) r.records.push_back({u, i, std::nullopt});
  return r;
}

// Full grid of `users` x `items` tokens with a prefix.
RawInteractions grid(const std::string& up, std::size_t users, std::size_t items, Domain d,
                     bool with_ts = false) {
  RawInteractions r;
  r.domain = d;
  for (std::size_t u = 0; u < users; ++u)
    for (std::size_t i = 0; i < items; ++i) {
      Interaction rec{up + std::to_string(u), "i" + std::to_string(i), std::nullopt};
      if (with_ts) rec.timestamp = static_cast<std::int64_t>(i);
      r.records.push_back(rec);
    }
  return r;
}

}  // namespace

TEST_CASE("parse: duplicate pair collapses to earliest timestamp") {
  auto r = parse("u1\ti1\t50\nu1\ti2\t7\nu1\ti1\t20\n");
  REQUIRE(r.records.size() == 2);
  for (auto& rec : r.records)
    if (rec.item == "i1") CHECK(*rec.timestamp == 20);
}

TEST_CASE("parse: single record with timestamp") {
  auto r = parse("u1\ti9\t100\n");
  REQUIRE(r.records.size() == 1);
  CHECK(r.records[0].user == "u1");
  CHECK(r.records[0].item == "i9");
  CHECK(*r.records[0].timestamp == 100);
}

TEST_CASE("parse: comments and blank lines skipped, no timestamp allowed") {
  auto r = parse("# header\n\nu1\ti1\n");
  REQUIRE(r.records.size() == 1);
  CHECK_FALSE(r.records[0].timestamp.has_value());
}

TEST_CASE("parse errors carry the line number") {
  auto line_of = [](const std::string& text) -> std::size_t {
    try {
      parse(text);
    } catch (const ParseError& e) {
      return e.line();
    }
    return 0;
  };
  CHECK(line_of("u1\ti1\nu1\t\t100\n") == 2);
  CHECK(line_of("\t i1\n") == 1);
  CHECK(line_of("u1\ti1\tabc\n") == 1);
  CHECK(line_of("u1\n") == 1);
  CHECK_THROWS_AS(parse(""), ParseError);
  CHECK_THROWS_AS(parse("# only a comment\n"), ParseError);
}

TEST_CASE("load_interactions: missing file") {
  CHECK_THROWS(load_interactions("/nonexistent/dir/x.tsv", Domain::Source));
}

TEST_CASE("write/parse round trip") {
  auto r = parse("a\tx\t3\nb\ty\t4\n");
  std::ostringstream out;
  write_interactions(r, out);
  auto back = parse(out.str());
  CHECK(as_set(back) == as_set(r));
}

TEST_CASE("k-core: no-op when everything already qualifies") {
  auto r = grid("u", 5, 5, Domain::Target);
  CHECK(as_set(filter_k_core(r, 5)) == as_set(r));
}

TEST_CASE("k-core: single user with 4 items collapses") {
  auto r = grid("u", 1, 4, Domain::Target);
  CHECK_THROWS_WITH_AS(filter_k_core(r, 5), doctest::Contains("dataset collapsed"),
                       std::runtime_error);
}

TEST_CASE("k-core: chain removal on a 10-user toy instance matches brute force") {
  // 10 users x 5 items dense block, plus u9 holding a sixth item that only
  // four users touch; removing that item must not drop u9 (still 5), but
  // a sparse u10 with 5 items, one of which dies, must go.
  auto base = as_set(grid("u", 10, 5, Domain::Target));
  for (int u = 0; u < 4; ++u) base.emplace("u" + std::to_string(u), "rare");
  for (int i = 0; i < 4; ++i) base.emplace("u10", "i" + std::to_string(i));
  base.emplace("u10", "rare");
  auto got = as_set(filter_k_core(from_pairs(base), 5));
  CHECK(got == brute_k_core(base, 5));
  // "rare" has 5 users (u0..u3, u10) so it survives the first pass;
  // nothing is removed here. Now make the chain: drop u0's link.
  base.erase({"u0", "rare"});
  got = as_set(filter_k_core(from_pairs(base), 5));
  CHECK(got == brute_k_core(base, 5));
  CHECK(got.count({"u10", "i0"}) == 0);
}

TEST_CASE("k-core: random instances match brute force and are a fixpoint") {
  std::mt19937_64 rng(5);
  for (int rep = 0; rep < 30; ++rep) {
    std::set<std::pair<std::string, std::string>> pairs;
    std::bernoulli_distribution keep(0.35);
    for (int u = 0; u < 14; ++u)
      for (int i = 0; i < 12; ++i)
        if (keep(rng)) pairs.emplace("u" + std::to_string(u), "i" + std::to_string(i));
    auto expect = brute_k_core(pairs, 3);
    if (expect.empty()) {
      CHECK_THROWS(filter_k_core(from_pairs(pairs), 3));
      continue;
    }
    auto once = filter_k_core(from_pairs(pairs), 3);
    CHECK(as_set(once) == expect);
    CHECK(as_set(filter_k_core(once, 3)) == as_set(once));
  }
}

TEST_CASE("build_cross_domain: role partition and index layout") {
  RawInteractions src, tgt;
  src.domain = Domain::Source;
  tgt.domain = Domain::Target;
  src.records = {{"a", "s1", {}}, {"b", "s2", {}}};
  tgt.records = {{"b", "t1", {}}, {"c", "t2", {}}};
  auto ds = build_cross_domain(src, tgt);
  REQUIRE(ds.user_tokens == std::vector<std::string>{"c", "b", "a"});
  CHECK(ds.roles[0] == UserRole::TargetOnly);
  CHECK(ds.roles[1] == UserRole::Overlap);
  CHECK(ds.roles[2] == UserRole::SourceOnly);
  CHECK(ds.n_target_users() == 2);
  CHECK(ds.n_source_users() == 2);
  CHECK(ds.global_from_source(0) == 1);  // b
  CHECK(ds.target.contains(1, 0));       // b -> t1
  CHECK(ds.source.contains(1, 0));       // a is source-local 1 -> s1
}

TEST_CASE("build_cross_domain: identical user sets are all overlap") {
  auto ds = build_cross_domain(grid("u", 4, 2, Domain::Source), grid("u", 4, 3, Domain::Target));
  CHECK(ds.n_overlap == 4);
  CHECK(ds.n_target_only == 0);
  CHECK(ds.n_source_only == 0);
  CHECK(ds.n_source_items() == 2);
  CHECK(ds.n_target_items() == 3);
}

TEST_CASE("build_cross_domain: zero overlap warns") {
  std::string warning;
  auto ds = build_cross_domain(grid("s", 2, 2, Domain::Source), grid("t", 2, 2, Domain::Target),
                               &warning);
  CHECK(ds.n_overlap == 0);
  CHECK_FALSE(warning.empty());
}

TEST_CASE("split sizes") {
  SplitRatios r;
  auto s10 = split_sizes(10, r);
  CHECK(s10.train == 8);
  CHECK(s10.valid == 1);
  CHECK(s10.test == 1);
  auto s5 = split_sizes(5, r);
  CHECK(s5.train == 3);
  CHECK(s5.valid == 1);
  CHECK(s5.test == 1);
  auto s3 = split_sizes(3, r);
  CHECK(s3.train == 1);
  CHECK(s3.valid == 1);
  CHECK(s3.test == 1);
  auto src10 = split_sizes(10, {8, 2, 0});
  CHECK(src10.train == 8);
  CHECK(src10.valid == 2);
  CHECK(src10.test == 0);
  auto src5 = split_sizes(5, {8, 2, 0});
  CHECK(src5.train == 4);
  CHECK(src5.valid == 1);
}

TEST_CASE("split_source gives 8:2 with an empty test part") {
  auto ds = build_cross_domain(grid("u", 3, 10, Domain::Source), grid("u", 3, 5, Domain::Target));
  auto s = split_source(ds, {}, 4);
  for (std::size_t u = 0; u < 3; ++u) {
    CHECK(s.train.row(u).size() == 8);
    CHECK(s.valid.row(u).size() == 2);
    CHECK(s.test.row(u).empty());
  }
  auto t = split_target(ds, {}, 4);
  for (std::size_t u = 0; u < 3; ++u) {
    CHECK(t.train.row(u).size() == 3);
    CHECK(t.valid.row(u).size() == 1);
    CHECK(t.test.row(u).size() == 1);
  }
}

TEST_CASE("chronological split puts the latest item in test") {
  auto ds = build_cross_domain(grid("u", 2, 5, Domain::Source),
                               grid("u", 2, 5, Domain::Target, /*with_ts=*/true));
  auto t = split_target(ds, {}, 0);
  // timestamps equal the item number, so i4 is newest and i3 next.
  for (std::size_t u = 0; u < 2; ++u) {
    CHECK(t.test.row(u) == std::vector<std::uint32_t>{4});
    CHECK(t.valid.row(u) == std::vector<std::uint32_t>{3});
  }
  CHECK_THROWS(split_target(build_cross_domain(grid("u", 2, 5, Domain::Source),
                                               grid("u", 2, 5, Domain::Target)),
                            {}, 0, SplitOrder::Chronological));
}

TEST_CASE("split partition property and determinism") {
  std::mt19937_64 rng(11);
  auto set = testing::random_interactions(40, 30, 9, rng);
  auto a = split_interactions(set, {}, {}, 3);
  auto b = split_interactions(set, {}, {}, 3);
  CHECK(a == b);
  auto c = split_interactions(set, {}, {}, 4);
  CHECK_FALSE(a.train == c.train);
  for (std::size_t u = 0; u < set.n_users(); ++u) {
    std::set<std::uint32_t> all;
    std::size_t total = 0;
    for (const auto* part : {&a.train, &a.valid, &a.test}) {
      all.insert(part->row(u).begin(), part->row(u).end());
      total += part->row(u).size();
    }
    CHECK(total == all.size());
    CHECK(std::vector<std::uint32_t>(all.begin(), all.end()) == set.row(u));
    CHECK_FALSE(a.test.row(u).empty());
  }
}

TEST_CASE("subsample_target") {
  std::mt19937_64 rng(2);
  auto set = testing::random_interactions(10, 40, 10, rng);  // 100 interactions
  auto split = split_interactions(set, {}, {10, 0, 0}, 0);
  REQUIRE(split.train.nnz() == 100);
  CHECK(subsample_target(split, 1.0, 9) == split);
  auto s = subsample_target(split, 0.2, 9);
  CHECK(s.train.nnz() == 20);
  CHECK(s == subsample_target(split, 0.2, 9));
  CHECK(s.valid == split.valid);
  CHECK(s.test == split.test);
  for (std::size_t u = 0; u < 10; ++u)
    for (auto i : s.train.row(u)) CHECK(split.train.contains(u, i));
  CHECK_THROWS(subsample_target(split, 0.0, 1));
  CHECK_THROWS(subsample_target(split, 1.5, 1));
}

TEST_CASE("archive round trip is exact") {
  SynthConfig sc;
  sc.n_users = 40;
  sc.n_items_per_domain = 30;
  sc.interactions_per_user = 8;
  sc.seed = 3;
  auto w = testing::small_world(sc, 6);
  auto dir = std::filesystem::temp_directory_path() / "cutrec_archive_test";
  std::filesystem::remove_all(dir);
  save_archive({w.ds, w.source_split, w.target_split}, w.synth.source, w.synth.target, dir);
  auto back = load_archive(dir);
  CHECK(back.dataset == w.ds);
  CHECK(back.source_split == w.source_split);
  CHECK(back.target_split == w.target_split);
  std::filesystem::remove_all(dir);
}
