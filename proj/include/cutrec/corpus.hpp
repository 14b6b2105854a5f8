#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cutrec {

enum class Domain { Source, Target };

std::string_view to_string(Domain d);

struct Interaction {
  std::string user;
  std::string item;
  std::optional<std::int64_t> timestamp;
};

// Raw records of one domain as read from disk. Pairs are unique.
struct RawInteractions {
  Domain domain = Domain::Target;
  std::vector<Interaction> records;

  std::size_t distinct_users() const;
  std::size_t distinct_items() const;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& origin, std::size_t line, const std::string& what);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Reads `user<TAB>item[<TAB>timestamp]` lines; `#` lines and blank lines are
// skipped. Duplicate pairs collapse onto the earliest timestamp.
RawInteractions parse_interactions(std::istream& in, Domain domain,
                                   const std::string& origin = "<stream>");
RawInteractions load_interactions(const std::filesystem::path& path, Domain domain);
void write_interactions(const RawInteractions& raw, std::ostream& out);
void write_interactions(const RawInteractions& raw, const std::filesystem::path& path);

// Removes users and items with fewer than `min_count` interactions, repeated
// until nothing changes. Throws if nothing survives.
RawInteractions filter_k_core(const RawInteractions& raw, std::size_t min_count = 5);

// Sparse binary user x item matrix, one sorted row per user.
class InteractionSet {
 public:
  InteractionSet() = default;
  InteractionSet(std::size_t n_users, std::size_t n_items);
  InteractionSet(std::size_t n_users, std::size_t n_items,
                 std::vector<std::vector<std::uint32_t>> rows);

  std::size_t n_users() const { return rows_.size(); }
  std::size_t n_items() const { return n_items_; }
  std::size_t nnz() const { return nnz_; }

  const std::vector<std::uint32_t>& row(std::size_t user) const { return rows_.at(user); }
  const std::vector<std::vector<std::uint32_t>>& rows() const { return rows_; }
  bool contains(std::size_t user, std::uint32_t item) const;

  // Number of users interacting with each item.
  std::vector<std::size_t> item_degrees() const;

  bool operator==(const InteractionSet&) const = default;

 private:
  std::size_t n_items_ = 0;
  std::size_t nnz_ = 0;
  std::vector<std::vector<std::uint32_t>> rows_;
};

enum class UserRole : std::uint8_t { TargetOnly, Overlap, SourceOnly };

std::string_view to_string(UserRole r);

// Both domains over one global user index space laid out as
// [TARGET_ONLY | OVERLAP | SOURCE_ONLY]. Target-domain users are the prefix
// [0, n), source-domain users are the suffix starting at n_target_only; a
// source-local user index is therefore `global - n_target_only`.
struct CrossDomainDataset {
  InteractionSet source;
  InteractionSet target;
  std::vector<std::string> user_tokens;
  std::vector<UserRole> roles;
  std::vector<std::string> source_item_tokens;
  std::vector<std::string> target_item_tokens;
  // Per-row timestamps parallel to each InteractionSet row; empty if any record
  // lacked a timestamp.
  std::vector<std::vector<std::int64_t>> source_timestamps;
  std::vector<std::vector<std::int64_t>> target_timestamps;
  std::size_t n_target_only = 0;
  std::size_t n_overlap = 0;
  std::size_t n_source_only = 0;

  std::size_t n_target_users() const { return n_target_only + n_overlap; }
  std::size_t n_source_users() const { return n_overlap + n_source_only; }
  std::size_t n_target_items() const { return target_item_tokens.size(); }
  std::size_t n_source_items() const { return source_item_tokens.size(); }

  std::size_t global_from_source(std::size_t source_user) const {
    return source_user + n_target_only;
  }

  bool operator==(const CrossDomainDataset&) const = default;
};

// Assigns indices by sorted token order within each role. Zero overlap is
// reported through `warning` (if given) and is not an error.
CrossDomainDataset build_cross_domain(const RawInteractions& source,
                                      const RawInteractions& target,
                                      std::string* warning = nullptr);

struct SplitDataset {
  InteractionSet train;
  InteractionSet valid;
  InteractionSet test;
  std::uint64_t split_seed = 0;

  bool operator==(const SplitDataset&) const = default;
};

enum class SplitOrder { Auto, Chronological, Random };

// Integer weights. split_source folds the test share into valid (8:1:1 -> 8:2).
struct SplitRatios {
  unsigned train = 8;
  unsigned valid = 1;
  unsigned test = 1;
};

// Per-user part sizes for a row of `count` interactions.
struct PartSizes {
  std::size_t train, valid, test;
};
PartSizes split_sizes(std::size_t count, SplitRatios ratios);

SplitDataset split_interactions(const InteractionSet& set,
                                const std::vector<std::vector<std::int64_t>>& timestamps,
                                SplitRatios ratios, std::uint64_t seed,
                                SplitOrder order = SplitOrder::Auto);
SplitDataset split_target(const CrossDomainDataset& ds, SplitRatios ratios, std::uint64_t seed,
                          SplitOrder order = SplitOrder::Auto);
SplitDataset split_source(const CrossDomainDataset& ds, SplitRatios ratios, std::uint64_t seed,
                          SplitOrder order = SplitOrder::Auto);

// Keeps ceil(fraction * |train|) training interactions chosen uniformly;
// valid and test are untouched.
SplitDataset subsample_target(const SplitDataset& split, double retain_fraction, std::uint64_t seed);

// Dataset archive: source.tsv, target.tsv, index.json, splits.json.
struct DatasetArchive {
  CrossDomainDataset dataset;
  SplitDataset source_split;
  SplitDataset target_split;
};

void save_archive(const DatasetArchive& archive, const RawInteractions& source,
                  const RawInteractions& target, const std::filesystem::path& dir);
DatasetArchive load_archive(const std::filesystem::path& dir);

}  // namespace cutrec
