#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dccl/data.hpp"
#include "dccl/model.hpp"

namespace dccl {

struct GroupMetrics {
  std::string label;  // Q1 (least popular) .. Q5 (most popular)
  double hr = 0.0;
  double ndcg = 0.0;
  std::size_t pairs = 0;
};

struct MetricsReport {
  std::uint32_t k = 20;
  double hr = 0.0;    // mean over users, in [0,1]; reports print x100
  double ndcg = 0.0;  // mean over users, in [0,1]
  // Per popularity-quintile breakdown over test pairs. Group values use an
  // additive per-pair decomposition so that the pair-count-weighted mean of
  // the group column reproduces the overall number exactly.
  std::vector<GroupMetrics> per_group;
  std::size_t num_users_evaluated = 0;
  std::size_t skipped_users = 0;  // test users outside the embedding id space
  std::size_t num_pairs = 0;
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
};

/// Top-k items for one user by composed score over the full catalog, train
/// items excluded, ties broken by ascending item id. exclude must be sorted.
std::vector<ItemId> rank_topk(const DisentangledEmbeddings& tables, UserId user, std::uint32_t k,
                              std::span<const ItemId> exclude);

/// |topk ∩ test| / min(k, |test|). test_items must be sorted.
double hr_at_k(std::span<const ItemId> topk, std::span<const ItemId> test_items, std::uint32_t k);

/// DCG over hit positions p (1-based, weight 1/log2(p+1)) divided by the
/// ideal DCG for min(k, |test|) hits.
double ndcg_at_k(std::span<const ItemId> topk, std::span<const ItemId> test_items, std::uint32_t k);

/// Assign every item to one of five popularity groups by ascending train
/// count (ties by id); group sizes differ by at most one.
std::vector<std::uint8_t> popularity_quintiles(const PopularityStats& stats);

/// Full-ranking evaluation of test against tables, excluding each user's
/// train items from the candidate set.
MetricsReport evaluate(const DisentangledEmbeddings& tables, const InteractionDataset& test,
                       const InteractionDataset& train, const PopularityStats& stats,
                       std::uint32_t k);

struct OodPoint {
  double target_proportion = 0.0;
  double achieved_proportion = 0.0;
  std::uint64_t seed = 0;
  MetricsReport report;
  double rel_hr_degradation = 0.0;  // (HR(base) - HR(point)) / HR(base)
};

struct OodSweep {
  MetricsReport base;
  std::vector<OodPoint> points;  // proportions x seeds, in argument order
};

/// Re-evaluates fixed tables on intervened test sets built per proportion
/// and seed.
OodSweep ood_sweep(const DisentangledEmbeddings& tables, const SplitDataset& split,
                   const PopularityStats& stats, std::span<const double> proportions,
                   std::span<const std::uint64_t> seeds, std::uint32_t k);

/// key=value header then a per-group table; extra_header entries are written
/// first, in order.
void write_report(const std::string& path, const MetricsReport& report,
                  std::span<const std::pair<std::string, std::string>> extra_header = {});

/// One metric per line: name \t group \t value.
void write_flat_metrics(const std::string& path, const MetricsReport& report);

void write_ood_summary(const std::string& path, const OodSweep& sweep);

}  // namespace dccl
