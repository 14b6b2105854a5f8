#include "cutrec/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "cutrec/linalg.hpp"
#include "json.hpp"

namespace cutrec {

using json = nlohmann::json;

std::string_view to_string(Domain d) { return d == Domain::Source ? "source" : "target"; }

std::string_view to_string(UserRole r) {
  switch (r) {
    case UserRole::TargetOnly: return "target_only";
    case UserRole::Overlap: return "overlap";
    case UserRole::SourceOnly: return "source_only";
  }
  return "?";
}

ParseError::ParseError(const std::string& origin, std::size_t line, const std::string& what)
    : std::runtime_error(origin + ":" + std::to_string(line) + ": " + what), line_(line) {}

std::size_t RawInteractions::distinct_users() const {
  std::unordered_set<std::string> s;
  for (const auto& r : records) s.insert(r.user);
  return s.size();
}

std::size_t RawInteractions::distinct_items() const {
  std::unordered_set<std::string> s;
  for (const auto& r : records) s.insert(r.item);
  return s.size();
}

namespace {

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find('\t', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

std::int64_t parse_timestamp(std::string_view s, const std::string& origin, std::size_t line) {
  if (s.empty()) throw ParseError(origin, line, "empty timestamp");
  std::size_t pos = 0;
  std::int64_t value = 0;
  try {
    value = std::stoll(std::string(s), &pos);
  } catch (const std::exception&) {
    throw ParseError(origin, line, "bad timestamp '" + std::string(s) + "'");
  }
  if (pos != s.size()) throw ParseError(origin, line, "bad timestamp '" + std::string(s) + "'");
  return value;
}

}  // namespace

RawInteractions parse_interactions(std::istream& in, Domain domain, const std::string& origin) {
  RawInteractions raw;
  raw.domain = domain;
  std::unordered_map<std::string, std::size_t> seen;  // "user\titem" -> record index
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    auto fields = split_tabs(line);
    if (fields.size() < 2 || fields.size() > 3)
      throw ParseError(origin, line_no, "expected 2 or 3 tab-separated fields");
    if (fields[0].empty()) throw ParseError(origin, line_no, "empty user token");
    if (fields[1].empty()) throw ParseError(origin, line_no, "empty item token");
    Interaction rec{std::string(fields[0]), std::string(fields[1]), std::nullopt};
    if (fields.size() == 3) rec.timestamp = parse_timestamp(fields[2], origin, line_no);

    std::string key = rec.user + '\t' + rec.item;
    auto it = seen.find(key);
    if (it == seen.end()) {
      seen.emplace(std::move(key), raw.records.size());
      raw.records.push_back(std::move(rec));
    } else {
      auto& kept = raw.records[it->second].timestamp;
      if (rec.timestamp && (!kept || *rec.timestamp < *kept)) kept = rec.timestamp;
    }
  }
  if (raw.records.empty()) throw ParseError(origin, line_no, "no interactions found");
  return raw;
}

RawInteractions load_interactions(const std::filesystem::path& path, Domain domain) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open interaction file: " + path.string());
  return parse_interactions(in, domain, path.string());
}

void write_interactions(const RawInteractions& raw, std::ostream& out) {
  for (const auto& r : raw.records) {
    out << r.user << '\t' << r.item;
    if (r.timestamp) out << '\t' << *r.timestamp;
    out << '\n';
  }
}

void write_interactions(const RawInteractions& raw, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_interactions(raw, out);
}

RawInteractions filter_k_core(const RawInteractions& raw, std::size_t min_count) {
  if (min_count < 1) throw std::invalid_argument("filter_k_core: min_count must be >= 1");
  std::vector<bool> alive(raw.records.size(), true);
  bool changed = true;
  while (changed) {
    changed = false;
    std::unordered_map<std::string_view, std::size_t> user_deg, item_deg;
    for (std::size_t r = 0; r < raw.records.size(); ++r) {
      if (!alive[r]) continue;
      ++user_deg[raw.records[r].user];
      ++item_deg[raw.records[r].item];
    }
    for (std::size_t r = 0; r < raw.records.size(); ++r) {
      if (!alive[r]) continue;
      if (user_deg[raw.records[r].user] < min_count || item_deg[raw.records[r].item] < min_count) {
        alive[r] = false;
        changed = true;
      }
    }
  }
  RawInteractions out;
  out.domain = raw.domain;
  for (std::size_t r = 0; r < raw.records.size(); ++r)
    if (alive[r]) out.records.push_back(raw.records[r]);
  if (out.records.empty())
    throw std::runtime_error("dataset collapsed: no interactions survive " +
                             std::to_string(min_count) + "-core filtering (" +
                             std::string(to_string(raw.domain)) + ")");
  return out;
}

InteractionSet::InteractionSet(std::size_t n_users, std::size_t n_items)
    : n_items_(n_items), rows_(n_users) {}

InteractionSet::InteractionSet(std::size_t n_users, std::size_t n_items,
                               std::vector<std::vector<std::uint32_t>> rows)
    : n_items_(n_items), rows_(std::move(rows)) {
  if (rows_.size() != n_users) throw std::invalid_argument("InteractionSet: row count mismatch");
  for (auto& row : rows_) {
    std::sort(row.begin(), row.end());
    if (std::adjacent_find(row.begin(), row.end()) != row.end())
      throw std::invalid_argument("InteractionSet: duplicate item in row");
    if (!row.empty() && row.back() >= n_items_)
      throw std::invalid_argument("InteractionSet: item index out of range");
    nnz_ += row.size();
  }
}

bool InteractionSet::contains(std::size_t user, std::uint32_t item) const {
  const auto& r = rows_.at(user);
  return std::binary_search(r.begin(), r.end(), item);
}

std::vector<std::size_t> InteractionSet::item_degrees() const {
  std::vector<std::size_t> deg(n_items_, 0);
  for (const auto& row : rows_)
    for (auto i : row) ++deg[i];
  return deg;
}

namespace {

std::vector<std::string> sorted_tokens(const std::set<std::string>& s) {
  return {s.begin(), s.end()};
}

// Builds rows (and timestamps if every record has one) for one domain.
void fill_domain(const RawInteractions& raw,
                 const std::unordered_map<std::string, std::size_t>& user_index,
                 const std::unordered_map<std::string, std::size_t>& item_index,
                 std::size_t n_users, std::size_t n_items, InteractionSet& set,
                 std::vector<std::vector<std::int64_t>>& timestamps) {
  bool all_timed = std::all_of(raw.records.begin(), raw.records.end(),
                               [](const Interaction& r) { return r.timestamp.has_value(); });
  std::vector<std::vector<std::pair<std::uint32_t, std::int64_t>>> tmp(n_users);
  for (const auto& r : raw.records) {
    auto u = user_index.at(r.user);
    auto i = static_cast<std::uint32_t>(item_index.at(r.item));
    tmp[u].emplace_back(i, r.timestamp.value_or(0));
  }
  std::vector<std::vector<std::uint32_t>> rows(n_users);
  timestamps.clear();
  if (all_timed) timestamps.resize(n_users);
  for (std::size_t u = 0; u < n_users; ++u) {
    std::sort(tmp[u].begin(), tmp[u].end());
    for (auto& [i, ts] : tmp[u]) {
      rows[u].push_back(i);
      if (all_timed) timestamps[u].push_back(ts);
    }
  }
  set = InteractionSet(n_users, n_items, std::move(rows));
}

struct IndexMaps {
  std::unordered_map<std::string, std::size_t> target_users, source_users, target_items,
      source_items;
};

IndexMaps make_maps(const CrossDomainDataset& ds) {
  IndexMaps maps;
  for (std::size_t g = 0; g < ds.user_tokens.size(); ++g) {
    if (g < ds.n_target_users()) maps.target_users.emplace(ds.user_tokens[g], g);
    if (g >= ds.n_target_only) maps.source_users.emplace(ds.user_tokens[g], g - ds.n_target_only);
  }
  for (std::size_t i = 0; i < ds.target_item_tokens.size(); ++i)
    maps.target_items.emplace(ds.target_item_tokens[i], i);
  for (std::size_t i = 0; i < ds.source_item_tokens.size(); ++i)
    maps.source_items.emplace(ds.source_item_tokens[i], i);
  return maps;
}

void fill_from_raw(CrossDomainDataset& ds, const RawInteractions& source,
                   const RawInteractions& target) {
  auto maps = make_maps(ds);
  auto check = [](const RawInteractions& raw, const std::unordered_map<std::string, std::size_t>& u,
                  const std::unordered_map<std::string, std::size_t>& i) {
    for (const auto& r : raw.records) {
      if (!u.count(r.user))
        throw std::runtime_error("unknown user token '" + r.user + "' in " +
                                 std::string(to_string(raw.domain)) + " interactions");
      if (!i.count(r.item))
        throw std::runtime_error("unknown item token '" + r.item + "' in " +
                                 std::string(to_string(raw.domain)) + " interactions");
    }
  };
  check(source, maps.source_users, maps.source_items);
  check(target, maps.target_users, maps.target_items);
  fill_domain(source, maps.source_users, maps.source_items, ds.n_source_users(),
              ds.n_source_items(), ds.source, ds.source_timestamps);
  fill_domain(target, maps.target_users, maps.target_items, ds.n_target_users(),
              ds.n_target_items(), ds.target, ds.target_timestamps);
}

}  // namespace

CrossDomainDataset build_cross_domain(const RawInteractions& source, const RawInteractions& target,
                                      std::string* warning) {
  std::set<std::string> su, tu, si, ti;
  for (const auto& r : source.records) {
    su.insert(r.user);
    si.insert(r.item);
  }
  for (const auto& r : target.records) {
    tu.insert(r.user);
    ti.insert(r.item);
  }
  std::set<std::string> t_only, overlap, s_only;
  for (const auto& u : tu) (su.count(u) ? overlap : t_only).insert(u);
  for (const auto& u : su)
    if (!tu.count(u)) s_only.insert(u);

  CrossDomainDataset ds;
  ds.n_target_only = t_only.size();
  ds.n_overlap = overlap.size();
  ds.n_source_only = s_only.size();
  for (auto* group : {&t_only, &overlap, &s_only}) {
    UserRole role = group == &t_only    ? UserRole::TargetOnly
                    : group == &overlap ? UserRole::Overlap
                                        : UserRole::SourceOnly;
    for (const auto& u : *group) {
      ds.user_tokens.push_back(u);
      ds.roles.push_back(role);
    }
  }
  ds.source_item_tokens = sorted_tokens(si);
  ds.target_item_tokens = sorted_tokens(ti);
  fill_from_raw(ds, source, target);
  if (ds.n_overlap == 0 && warning)
    *warning = "no overlapping users between source and target domains";
  return ds;
}

PartSizes split_sizes(std::size_t count, SplitRatios ratios) {
  const std::size_t total = ratios.train + ratios.valid + ratios.test;
  if (total == 0) throw std::invalid_argument("split ratios sum to zero");
  std::size_t valid = count * ratios.valid / total;
  std::size_t test = count * ratios.test / total;
  std::size_t parts = 1 + (ratios.valid > 0) + (ratios.test > 0);
  if (count >= parts) {
    if (ratios.valid > 0) valid = std::max<std::size_t>(valid, 1);
    if (ratios.test > 0) test = std::max<std::size_t>(test, 1);
  }
  if (valid + test > count) {
    // Tiny rows: fill test, then valid; train gets nothing.
    test = std::min(test, count);
    valid = std::min(valid, count - test);
  }
  return {count - valid - test, valid, test};
}

SplitDataset split_interactions(const InteractionSet& set,
                                const std::vector<std::vector<std::int64_t>>& timestamps,
                                SplitRatios ratios, std::uint64_t seed, SplitOrder order) {
  bool chrono = order == SplitOrder::Chronological ||
                (order == SplitOrder::Auto && !timestamps.empty());
  if (chrono && timestamps.size() != set.n_users())
    throw std::invalid_argument("chronological split requested without timestamps");

  const std::size_t n = set.n_users();
  std::vector<std::vector<std::uint32_t>> train(n), valid(n), test(n);
  std::mt19937_64 rng(seed);
  for (std::size_t u = 0; u < n; ++u) {
    std::vector<std::uint32_t> items = set.row(u);
    if (chrono) {
      std::vector<std::size_t> idx(items.size());
      std::iota(idx.begin(), idx.end(), 0);
      const auto& ts = timestamps[u];
      std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return ts[a] != ts[b] ? ts[a] < ts[b] : items[a] < items[b];
      });
      std::vector<std::uint32_t> ordered;
      for (auto k : idx) ordered.push_back(items[k]);
      items = std::move(ordered);
    } else {
      std::shuffle(items.begin(), items.end(), rng);
    }
    auto sz = split_sizes(items.size(), ratios);
    train[u].assign(items.begin(), items.begin() + sz.train);
    valid[u].assign(items.begin() + sz.train, items.begin() + sz.train + sz.valid);
    test[u].assign(items.begin() + sz.train + sz.valid, items.end());
  }
  SplitDataset out;
  out.train = InteractionSet(n, set.n_items(), std::move(train));
  out.valid = InteractionSet(n, set.n_items(), std::move(valid));
  out.test = InteractionSet(n, set.n_items(), std::move(test));
  out.split_seed = seed;
  return out;
}

SplitDataset split_target(const CrossDomainDataset& ds, SplitRatios ratios, std::uint64_t seed,
                          SplitOrder order) {
  return split_interactions(ds.target, ds.target_timestamps, ratios, seed, order);
}

SplitDataset split_source(const CrossDomainDataset& ds, SplitRatios ratios, std::uint64_t seed,
                          SplitOrder order) {
  ratios.valid += ratios.test;
  ratios.test = 0;
  return split_interactions(ds.source, ds.source_timestamps, ratios, derive_seed(seed, 1), order);
}

SplitDataset subsample_target(const SplitDataset& split, double retain_fraction,
                              std::uint64_t seed) {
  if (!(retain_fraction > 0.0 && retain_fraction <= 1.0))
    throw std::invalid_argument("subsample_target: fraction must be in (0, 1]");
  if (retain_fraction == 1.0) return split;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> all;
  for (std::size_t u = 0; u < split.train.n_users(); ++u)
    for (auto i : split.train.row(u)) all.emplace_back(static_cast<std::uint32_t>(u), i);
  auto keep = static_cast<std::size_t>(
      std::ceil(retain_fraction * static_cast<double>(all.size()) - 1e-9));
  std::mt19937_64 rng(derive_seed(seed, 7));
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(keep);
  std::vector<std::vector<std::uint32_t>> rows(split.train.n_users());
  for (auto [u, i] : all) rows[u].push_back(i);
  SplitDataset out = split;
  out.train = InteractionSet(split.train.n_users(), split.train.n_items(), std::move(rows));
  return out;
}

namespace {

json rows_json(const InteractionSet& s) {
  json arr = json::array();
  for (const auto& row : s.rows()) arr.push_back(row);
  return arr;
}

InteractionSet rows_from_json(const json& j, std::size_t n_users, std::size_t n_items) {
  if (!j.is_array() || j.size() != n_users)
    throw std::runtime_error("splits.json: row count does not match index.json");
  std::vector<std::vector<std::uint32_t>> rows(n_users);
  for (std::size_t u = 0; u < n_users; ++u) rows[u] = j[u].get<std::vector<std::uint32_t>>();
  return InteractionSet(n_users, n_items, std::move(rows));
}

void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << s;
}

json read_json(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(p.string() + ": " + e.what());
  }
}

}  // namespace

void save_archive(const DatasetArchive& archive, const RawInteractions& source,
                  const RawInteractions& target, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_interactions(source, dir / "source.tsv");
  write_interactions(target, dir / "target.tsv");
  const auto& ds = archive.dataset;
  json roles = json::array();
  for (auto r : ds.roles) roles.push_back(std::string(to_string(r)));
  json index = {
      {"format_version", 1},
      {"counts",
       {{"target_only", ds.n_target_only},
        {"overlap", ds.n_overlap},
        {"source_only", ds.n_source_only},
        {"source_items", ds.n_source_items()},
        {"target_items", ds.n_target_items()}}},
      {"user_tokens", ds.user_tokens},
      {"user_roles", roles},
      {"source_item_tokens", ds.source_item_tokens},
      {"target_item_tokens", ds.target_item_tokens},
  };
  write_text(dir / "index.json", index.dump(1) + "\n");
  json splits = {
      {"format_version", 1},
      {"target", {{"seed", archive.target_split.split_seed},
                  {"train", rows_json(archive.target_split.train)},
                  {"valid", rows_json(archive.target_split.valid)},
                  {"test", rows_json(archive.target_split.test)}}},
      {"source", {{"seed", archive.source_split.split_seed},
                  {"train", rows_json(archive.source_split.train)},
                  {"valid", rows_json(archive.source_split.valid)}}},
  };
  write_text(dir / "splits.json", splits.dump() + "\n");
}

DatasetArchive load_archive(const std::filesystem::path& dir) {
  for (const char* name : {"source.tsv", "target.tsv", "index.json", "splits.json"})
    if (!std::filesystem::exists(dir / name))
      throw std::runtime_error("dataset archive is missing " + (dir / name).string());
  auto index = read_json(dir / "index.json");
  if (index.value("format_version", 0) != 1)
    throw std::runtime_error("index.json: unsupported format_version");

  DatasetArchive out;
  auto& ds = out.dataset;
  const auto& counts = index.at("counts");
  ds.n_target_only = counts.at("target_only").get<std::size_t>();
  ds.n_overlap = counts.at("overlap").get<std::size_t>();
  ds.n_source_only = counts.at("source_only").get<std::size_t>();
  ds.user_tokens = index.at("user_tokens").get<std::vector<std::string>>();
  for (const auto& r : index.at("user_roles")) {
    auto s = r.get<std::string>();
    if (s == "target_only") ds.roles.push_back(UserRole::TargetOnly);
    else if (s == "overlap") ds.roles.push_back(UserRole::Overlap);
    else if (s == "source_only") ds.roles.push_back(UserRole::SourceOnly);
    else throw std::runtime_error("index.json: unknown role '" + s + "'");
  }
  ds.source_item_tokens = index.at("source_item_tokens").get<std::vector<std::string>>();
  ds.target_item_tokens = index.at("target_item_tokens").get<std::vector<std::string>>();
  if (ds.user_tokens.size() != ds.n_target_only + ds.n_overlap + ds.n_source_only ||
      ds.roles.size() != ds.user_tokens.size())
    throw std::runtime_error("index.json: user counts are inconsistent");

  auto source = load_interactions(dir / "source.tsv", Domain::Source);
  auto target = load_interactions(dir / "target.tsv", Domain::Target);
  fill_from_raw(ds, source, target);

  auto splits = read_json(dir / "splits.json");
  const auto& t = splits.at("target");
  out.target_split.split_seed = t.at("seed").get<std::uint64_t>();
  out.target_split.train = rows_from_json(t.at("train"), ds.n_target_users(), ds.n_target_items());
  out.target_split.valid = rows_from_json(t.at("valid"), ds.n_target_users(), ds.n_target_items());
  out.target_split.test = rows_from_json(t.at("test"), ds.n_target_users(), ds.n_target_items());
  const auto& s = splits.at("source");
  out.source_split.split_seed = s.at("seed").get<std::uint64_t>();
  out.source_split.train = rows_from_json(s.at("train"), ds.n_source_users(), ds.n_source_items());
  out.source_split.valid = rows_from_json(s.at("valid"), ds.n_source_users(), ds.n_source_items());
  out.source_split.test = InteractionSet(ds.n_source_users(), ds.n_source_items());
  return out;
}

}  // namespace cutrec
