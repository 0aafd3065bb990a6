#include "dccl/eval.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace dccl {

namespace {

bool contains(std::span<const ItemId> sorted, ItemId x) {
  return std::binary_search(sorted.begin(), sorted.end(), x);
}

double ideal_dcg(std::size_t hits) {
  double s = 0.0;
  for (std::size_t p = 1; p <= hits; ++p) s += 1.0 / std::log2(static_cast<double>(p) + 1.0);
  return s;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);  // binary: byte-stable newlines
  if (!out) throw IoError("cannot open for writing: " + path);
  return out;
}

}  // namespace

std::vector<ItemId> rank_topk(const DisentangledEmbeddings& tables, UserId user, std::uint32_t k,
                              std::span<const ItemId> exclude) {
  if (user >= tables.num_users) throw std::out_of_range("rank_topk: user id out of range");
  if (k == 0) throw std::invalid_argument("rank_topk: k must be >= 1");
  const std::size_t n = tables.num_items;
  const auto ui = tables.user_interest.row(user);
  const auto uc = tables.user_conformity.row(user);

  std::vector<double> scores(n);
  for (std::size_t i = 0; i < n; ++i)
    scores[i] = dot(ui, tables.item_interest.row(i)) + dot(uc, tables.item_conformity.row(i));

  std::vector<ItemId> cand;
  cand.reserve(n - std::min<std::size_t>(n, exclude.size()));
  for (ItemId i = 0; i < n; ++i)
    if (!contains(exclude, i)) cand.push_back(i);

  const std::size_t take = std::min<std::size_t>(k, cand.size());
  const auto better = [&scores](ItemId a, ItemId b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  };
  std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(take), cand.end(),
                    better);
  cand.resize(take);
  return cand;
}

double hr_at_k(std::span<const ItemId> topk, std::span<const ItemId> test_items, std::uint32_t k) {
  if (test_items.empty()) throw std::invalid_argument("hr_at_k: empty test set");
  std::size_t hits = 0;
  for (ItemId i : topk) hits += contains(test_items, i) ? 1 : 0;
  const auto denom = std::min<std::size_t>(k, test_items.size());
  return static_cast<double>(hits) / static_cast<double>(denom);
}

double ndcg_at_k(std::span<const ItemId> topk, std::span<const ItemId> test_items,
                 std::uint32_t k) {
  if (test_items.empty()) throw std::invalid_argument("ndcg_at_k: empty test set");
  double dcg = 0.0;
  for (std::size_t p = 0; p < topk.size(); ++p)
    if (contains(test_items, topk[p])) dcg += 1.0 / std::log2(static_cast<double>(p) + 2.0);
  return dcg / ideal_dcg(std::min<std::size_t>(k, test_items.size()));
}

std::vector<std::uint8_t> popularity_quintiles(const PopularityStats& stats) {
  const std::size_t n = stats.counts.size();
  std::vector<ItemId> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&stats](ItemId a, ItemId b) {
    if (stats.counts[a] != stats.counts[b]) return stats.counts[a] < stats.counts[b];
    return a < b;
  });
  std::vector<std::uint8_t> group(n, 0);
  const std::size_t base = n / 5, extra = n % 5;
  std::size_t pos = 0;
  for (std::uint8_t g = 0; g < 5; ++g) {
    const std::size_t sz = base + (g < extra ? 1 : 0);
    for (std::size_t j = 0; j < sz; ++j) group[order[pos++]] = g;
  }
  return group;
}

MetricsReport evaluate(const DisentangledEmbeddings& tables, const InteractionDataset& test,
                       const InteractionDataset& train, const PopularityStats& stats,
                       std::uint32_t k) {
  if (test.empty()) throw std::invalid_argument("evaluate: empty test set");
  if (k == 0) throw std::invalid_argument("evaluate: k must be >= 1");
  if (test.num_items != tables.num_items || train.num_items != tables.num_items)
    throw std::invalid_argument("evaluate: item id space mismatch");
  if (stats.counts.size() != tables.num_items)
    throw std::invalid_argument("evaluate: popularity stats mismatch");

  const auto test_by_user = test.items_by_user();
  const auto train_by_user = train.items_by_user();

  MetricsReport report;
  report.k = k;

  struct UserSlot {
    UserId user;
    std::size_t pair_offset;  // index of this user's first pair slot
  };
  std::vector<UserSlot> slots;
  std::size_t num_pairs = 0;
  for (UserId u = 0; u < test.num_users; ++u) {
    if (test_by_user[u].empty()) continue;
    if (u >= tables.num_users) {
      ++report.skipped_users;
      continue;
    }
    slots.push_back({u, num_pairs});
    num_pairs += test_by_user[u].size();
  }
  if (slots.empty()) throw std::invalid_argument("evaluate: no evaluable test users");

  std::vector<double> hr_u(slots.size()), ndcg_u(slots.size());
  // Per test pair: 0 while missed, otherwise the 1-based rank position.
  std::vector<std::uint32_t> pair_rank(num_pairs, 0);
  std::vector<double> pair_idcg(num_pairs, 1.0);
  std::vector<double> pair_m(num_pairs, 1.0);  // min(k, |test_u|) of the owning user

  parallel_for(slots.size(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t s = begin; s < end; ++s) {
      const UserId u = slots[s].user;
      const auto& tu = test_by_user[u];
      std::span<const ItemId> excl;
      if (u < train.num_users) excl = train_by_user[u];
      const auto topk = rank_topk(tables, u, k, excl);

      const double m = static_cast<double>(std::min<std::size_t>(k, tu.size()));
      const double idcg = ideal_dcg(std::min<std::size_t>(k, tu.size()));
      std::size_t hits = 0;
      double dcg = 0.0;
      for (std::size_t p = 0; p < topk.size(); ++p) {
        const auto it = std::lower_bound(tu.begin(), tu.end(), topk[p]);
        if (it == tu.end() || *it != topk[p]) continue;
        ++hits;
        dcg += 1.0 / std::log2(static_cast<double>(p) + 2.0);
        pair_rank[slots[s].pair_offset + static_cast<std::size_t>(it - tu.begin())] =
            static_cast<std::uint32_t>(p + 1);
      }
      hr_u[s] = static_cast<double>(hits) / m;
      ndcg_u[s] = dcg / idcg;
      for (std::size_t j = 0; j < tu.size(); ++j) {
        pair_idcg[slots[s].pair_offset + j] = idcg;
        pair_m[slots[s].pair_offset + j] = m;
      }
    }
  });

  const double n_users = static_cast<double>(slots.size());
  for (std::size_t s = 0; s < slots.size(); ++s) {
    report.hr += hr_u[s];
    report.ndcg += ndcg_u[s];
  }
  report.hr /= n_users;
  report.ndcg /= n_users;
  report.num_users_evaluated = slots.size();
  report.num_pairs = num_pairs;

  // Group decomposition: pair (u, i) contributes x = h * P / (m_u * N) to HR
  // and 1/log2(rank+1) * P / (idcg_u * N) to NDCG; the mean of x over all
  // pairs equals the overall metric, so pair-weighted group means aggregate
  // back exactly.
  const auto quintile = popularity_quintiles(stats);
  std::array<double, 5> hr_acc{}, ndcg_acc{};
  std::array<std::size_t, 5> cnt{};
  const double p_total = static_cast<double>(num_pairs);
  for (const auto& slot : slots) {
    const auto& tu = test_by_user[slot.user];
    for (std::size_t j = 0; j < tu.size(); ++j) {
      const std::size_t pi = slot.pair_offset + j;
      const std::uint8_t g = quintile[tu[j]];
      ++cnt[g];
      if (pair_rank[pi] > 0) {
        hr_acc[g] += p_total / (pair_m[pi] * n_users);
        ndcg_acc[g] += p_total / (std::log2(static_cast<double>(pair_rank[pi]) + 1.0) *
                                  pair_idcg[pi] * n_users);
      }
    }
  }
  for (int g = 0; g < 5; ++g) {
    GroupMetrics gm;
    gm.label = "Q" + std::to_string(g + 1);
    gm.pairs = cnt[g];
    if (cnt[g] > 0) {
      gm.hr = hr_acc[g] / static_cast<double>(cnt[g]);
      gm.ndcg = ndcg_acc[g] / static_cast<double>(cnt[g]);
    }
    report.per_group.push_back(std::move(gm));
  }
  return report;
}

OodSweep ood_sweep(const DisentangledEmbeddings& tables, const SplitDataset& split,
                   const PopularityStats& stats, std::span<const double> proportions,
                   std::span<const std::uint64_t> seeds, std::uint32_t k) {
  OodSweep sweep;
  sweep.base = evaluate(tables, split.test, split.train, stats, k);
  for (double prop : proportions) {
    for (std::uint64_t seed : seeds) {
      const IntervenedTest it = build_intervened_test(split.test, stats, prop, seed);
      OodPoint point;
      point.target_proportion = prop;
      point.achieved_proportion = it.achieved_proportion;
      point.seed = seed;
      point.report = evaluate(tables, it.test, split.train, stats, k);
      point.report.seed = seed;
      point.report.config_hash = sweep.base.config_hash;
      if (sweep.base.hr > 0.0)
        point.rel_hr_degradation = (sweep.base.hr - point.report.hr) / sweep.base.hr;
      sweep.points.push_back(std::move(point));
    }
  }
  return sweep;
}

void write_report(const std::string& path, const MetricsReport& report,
                  std::span<const std::pair<std::string, std::string>> extra_header) {
  auto out = open_out(path);
  for (const auto& [key, value] : extra_header) out << key << "=" << value << "\n";
  out << "k=" << report.k << "\n";
  out << "hr=" << format_g17(report.hr) << "\n";
  out << "ndcg=" << format_g17(report.ndcg) << "\n";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", report.hr * 100.0);
  out << "hr_x100=" << buf << "\n";
  std::snprintf(buf, sizeof(buf), "%.6f", report.ndcg * 100.0);
  out << "ndcg_x100=" << buf << "\n";
  out << "num_users_evaluated=" << report.num_users_evaluated << "\n";
  out << "skipped_users=" << report.skipped_users << "\n";
  out << "num_pairs=" << report.num_pairs << "\n";
  out << "config_hash=" << report.config_hash << "\n";
  out << "seed=" << report.seed << "\n";
  out << "\n";
  out << "group\tpairs\thr\tndcg\n";
  for (const auto& g : report.per_group)
    out << g.label << "\t" << g.pairs << "\t" << format_g17(g.hr) << "\t" << format_g17(g.ndcg)
        << "\n";
  if (!out) throw IoError("write failed: " + path);
}

void write_flat_metrics(const std::string& path, const MetricsReport& report) {
  auto out = open_out(path);
  out << "hr\toverall\t" << format_g17(report.hr) << "\n";
  out << "ndcg\toverall\t" << format_g17(report.ndcg) << "\n";
  out << "users\toverall\t" << report.num_users_evaluated << "\n";
  out << "pairs\toverall\t" << report.num_pairs << "\n";
  for (const auto& g : report.per_group) {
    out << "hr\t" << g.label << "\t" << format_g17(g.hr) << "\n";
    out << "ndcg\t" << g.label << "\t" << format_g17(g.ndcg) << "\n";
    out << "pairs\t" << g.label << "\t" << g.pairs << "\n";
  }
  if (!out) throw IoError("write failed: " + path);
}

void write_ood_summary(const std::string& path, const OodSweep& sweep) {
  auto out = open_out(path);
  out << "target\tachieved\tseed\thr\tndcg\trel_hr_degradation\n";
  out << "base\tbase\t-\t" << format_g17(sweep.base.hr) << "\t" << format_g17(sweep.base.ndcg)
      << "\t0\n";
  for (const auto& p : sweep.points)
    out << format_g17(p.target_proportion) << "\t" << format_g17(p.achieved_proportion) << "\t"
        << p.seed << "\t" << format_g17(p.report.hr) << "\t" << format_g17(p.report.ndcg) << "\t"
        << format_g17(p.rel_hr_degradation) << "\n";
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace dccl
