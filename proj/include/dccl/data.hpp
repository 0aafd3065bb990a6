#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dccl/common.hpp"

namespace dccl {

enum class LogFormat { kCsv, kTsv };

struct RawRecord {
  std::string user_key;
  std::string item_key;
  std::optional<double> value;          // absent = unit (plain click/event)
  std::optional<std::int64_t> timestamp;
};

struct RawInteractions {
  std::vector<RawRecord> records;
};

/// Deduplicated binary interactions over contiguous integer ids.
/// `pairs` is sorted by (user, item) and duplicate-free; ids are assigned by
/// lexicographic key order so the mapping is independent of file order.
struct InteractionDataset {
  std::uint32_t num_users = 0;
  std::uint32_t num_items = 0;
  std::vector<std::pair<UserId, ItemId>> pairs;
  std::vector<std::string> user_keys;  // id -> original key (may be empty)
  std::vector<std::string> item_keys;
  std::unordered_map<std::string, UserId> user_index;
  std::unordered_map<std::string, ItemId> item_index;

  std::size_t num_pairs() const { return pairs.size(); }
  bool empty() const { return pairs.empty(); }

  std::vector<std::uint32_t> user_degrees() const;
  std::vector<std::uint32_t> item_degrees() const;
  /// Items of each user, ascending. Index by user id.
  std::vector<std::vector<ItemId>> items_by_user() const;

  void sort_pairs();
  void rebuild_indices();
};

struct PopularityStats {
  std::vector<std::uint32_t> counts;   // train-only interaction counts
  std::vector<double> i_pop;           // counts / max count, in [0,1]
  double popular_threshold = 0.0;      // 80th percentile of the count multiset
  std::vector<std::uint8_t> is_popular;  // counts[i] > popular_threshold
};

struct SplitDataset {
  InteractionDataset train;
  InteractionDataset test;
  std::uint64_t seed = 0;
};

struct IntervenedTest {
  InteractionDataset test;
  double target_proportion = 0.0;
  double achieved_proportion = 0.0;
  std::size_t popular_kept = 0;
  std::size_t popular_total = 0;
  std::size_t unpopular_total = 0;
};

RawInteractions load_interactions(const std::filesystem::path& path, LogFormat format);

/// Every record becomes a positive pair regardless of value; duplicates
/// collapse; ids assigned by sorted key order.
InteractionDataset binarize(const RawInteractions& raw);

/// Iteratively peels users and items with degree < k until fixpoint, then
/// re-compacts ids (survivors keep their relative order). May return an
/// empty dataset; callers decide whether that is fatal.
InteractionDataset k_core_filter(const InteractionDataset& data, std::uint32_t k = 10);

/// Per-user random holdout of round(test_fraction * degree) pairs. Users
/// that would keep zero train pairs are dropped from both views. The id
/// space is preserved (dropped users simply have no pairs).
SplitDataset split(const InteractionDataset& data, double test_fraction, std::uint64_t seed);

PopularityStats compute_popularity(const InteractionDataset& train);

/// Keeps all test pairs on unpopular items and downsamples pairs on popular
/// items to the largest count whose proportion does not exceed the target.
IntervenedTest build_intervened_test(const InteractionDataset& test, const PopularityStats& stats,
                                     double target_popular_prop, std::uint64_t seed);

/// Linear-interpolated percentile of a multiset (values need not be sorted).
/// p in [0,1].
double percentile_linear(std::vector<double> values, double p);

// Canonical on-disk formats. Dataset: "users=<n> items=<m> pairs=<p>" header
// then one "user\titem" line per pair, sorted. Popularity sidecar:
// "item_id\tcount\ti_pop\tis_popular" header then one row per item.
void write_canonical(const std::filesystem::path& path, const InteractionDataset& data);
InteractionDataset read_canonical(const std::filesystem::path& path);
void write_popularity(const std::filesystem::path& path, const PopularityStats& stats);

}  // namespace dccl
