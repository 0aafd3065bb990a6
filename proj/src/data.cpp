#include "dccl/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "dccl/rng.hpp"

namespace dccl {

namespace {

std::vector<std::string> split_fields(const std::string& line, char delim) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == delim) {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  return fields;
}

bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  std::size_t pos = 0;
  try {
    out = std::stod(s, &pos);
  } catch (const std::exception&) {
    return false;
  }
  return pos == s.size();
}

bool parse_int64(const std::string& s, std::int64_t& out) {
  if (s.empty()) return false;
  std::size_t pos = 0;
  try {
    out = std::stoll(s, &pos);
  } catch (const std::exception&) {
    return false;
  }
  return pos == s.size();
}

[[noreturn]] void malformed(const std::filesystem::path& path, std::size_t line_no, const std::string& what) {
  throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + what);
}

}  // namespace

std::vector<std::uint32_t> InteractionDataset::user_degrees() const {
  std::vector<std::uint32_t> deg(num_users, 0);
  for (const auto& [u, i] : pairs) deg[u]++;
  return deg;
}

std::vector<std::uint32_t> InteractionDataset::item_degrees() const {
  std::vector<std::uint32_t> deg(num_items, 0);
  for (const auto& [u, i] : pairs) deg[i]++;
  return deg;
}

std::vector<std::vector<ItemId>> InteractionDataset::items_by_user() const {
  std::vector<std::vector<ItemId>> by_user(num_users);
  for (const auto& [u, i] : pairs) by_user[u].push_back(i);
  for (auto& v : by_user) std::sort(v.begin(), v.end());
  return by_user;
}

void InteractionDataset::sort_pairs() {
  std::sort(pairs.begin(), pairs.end());
  pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
}

void InteractionDataset::rebuild_indices() {
  user_index.clear();
  item_index.clear();
  for (UserId u = 0; u < user_keys.size(); ++u) user_index.emplace(user_keys[u], u);
  for (ItemId i = 0; i < item_keys.size(); ++i) item_index.emplace(item_keys[i], i);
}

RawInteractions load_interactions(const std::filesystem::path& path, LogFormat format) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  const char delim = format == LogFormat::kCsv ? ',' : '\t';

  RawInteractions raw;
  std::string line;
  std::size_t line_no = 0;
  bool first_content_line = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;

    auto fields = split_fields(line, delim);
    if (first_content_line) {
      first_content_line = false;
      // Header heuristic: a third field that is not a number.
      if (fields.size() >= 3) {
        double ignored;
        if (!parse_double(fields[2], ignored)) continue;
      }
    }
    if (fields.size() < 2) malformed(path, line_no, "expected at least 2 fields, got " + std::to_string(fields.size()));
    if (fields.size() > 4) malformed(path, line_no, "expected at most 4 fields, got " + std::to_string(fields.size()));
    if (fields[0].empty() || fields[1].empty()) malformed(path, line_no, "empty user or item key");

    RawRecord rec;
    rec.user_key = fields[0];
    rec.item_key = fields[1];
    if (fields.size() >= 3 && !fields[2].empty()) {
      double v;
      if (!parse_double(fields[2], v)) malformed(path, line_no, "bad value field '" + fields[2] + "'");
      rec.value = v;
    }
    if (fields.size() >= 4 && !fields[3].empty()) {
      std::int64_t t;
      if (!parse_int64(fields[3], t)) malformed(path, line_no, "bad timestamp field '" + fields[3] + "'");
      rec.timestamp = t;
    }
    raw.records.push_back(std::move(rec));
  }
  if (in.bad()) throw IoError("read failure on " + path.string());
  return raw;
}

InteractionDataset binarize(const RawInteractions& raw) {
  std::vector<std::string> user_keys, item_keys;
  user_keys.reserve(raw.records.size());
  item_keys.reserve(raw.records.size());
  for (const auto& rec : raw.records) {
    user_keys.push_back(rec.user_key);
    item_keys.push_back(rec.item_key);
  }
  std::sort(user_keys.begin(), user_keys.end());
  user_keys.erase(std::unique(user_keys.begin(), user_keys.end()), user_keys.end());
  std::sort(item_keys.begin(), item_keys.end());
  item_keys.erase(std::unique(item_keys.begin(), item_keys.end()), item_keys.end());

  InteractionDataset data;
  data.num_users = static_cast<std::uint32_t>(user_keys.size());
  data.num_items = static_cast<std::uint32_t>(item_keys.size());
  data.user_keys = std::move(user_keys);
  data.item_keys = std::move(item_keys);
  data.rebuild_indices();

  data.pairs.reserve(raw.records.size());
  for (const auto& rec : raw.records) {
    data.pairs.emplace_back(data.user_index.at(rec.user_key), data.item_index.at(rec.item_key));
  }
  data.sort_pairs();
  return data;
}

InteractionDataset k_core_filter(const InteractionDataset& data, std::uint32_t k) {
  if (k < 1) throw std::invalid_argument("k_core_filter: k must be >= 1");

  auto user_deg = data.user_degrees();
  auto item_deg = data.item_degrees();
  std::vector<std::vector<ItemId>> user_items(data.num_users);
  std::vector<std::vector<UserId>> item_users(data.num_items);
  for (const auto& [u, i] : data.pairs) {
    user_items[u].push_back(i);
    item_users[i].push_back(u);
  }

  std::vector<std::uint8_t> user_alive(data.num_users, 1), item_alive(data.num_items, 1);
  // Peel with an explicit worklist; each removal may push neighbors under k.
  std::vector<std::pair<bool, std::uint32_t>> work;  // (is_user, id)
  for (UserId u = 0; u < data.num_users; ++u)
    if (user_deg[u] < k) work.emplace_back(true, u);
  for (ItemId i = 0; i < data.num_items; ++i)
    if (item_deg[i] < k) work.emplace_back(false, i);

  while (!work.empty()) {
    auto [is_user, id] = work.back();
    work.pop_back();
    if (is_user) {
      if (!user_alive[id]) continue;
      user_alive[id] = 0;
      for (ItemId i : user_items[id]) {
        if (item_alive[i] && --item_deg[i] < k) work.emplace_back(false, i);
      }
    } else {
      if (!item_alive[id]) continue;
      item_alive[id] = 0;
      for (UserId u : item_users[id]) {
        if (user_alive[u] && --user_deg[u] < k) work.emplace_back(true, u);
      }
    }
  }

  // Re-compact ids, survivors keep relative order.
  std::vector<UserId> user_map(data.num_users, 0);
  std::vector<ItemId> item_map(data.num_items, 0);
  InteractionDataset out;
  for (UserId u = 0; u < data.num_users; ++u) {
    if (user_alive[u]) {
      user_map[u] = out.num_users++;
      if (!data.user_keys.empty()) out.user_keys.push_back(data.user_keys[u]);
    }
  }
  for (ItemId i = 0; i < data.num_items; ++i) {
    if (item_alive[i]) {
      item_map[i] = out.num_items++;
      if (!data.item_keys.empty()) out.item_keys.push_back(data.item_keys[i]);
    }
  }
  for (const auto& [u, i] : data.pairs) {
    if (user_alive[u] && item_alive[i]) out.pairs.emplace_back(user_map[u], item_map[i]);
  }
  out.sort_pairs();
  out.rebuild_indices();
  return out;
}

SplitDataset split(const InteractionDataset& data, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw std::invalid_argument("split: test_fraction must be in (0,1)");

  rng::Stream stream(rng::derive(seed, "split"));
  SplitDataset out;
  out.seed = seed;
  out.train = data;
  out.train.pairs.clear();
  out.test = out.train;

  const auto by_user = data.items_by_user();
  for (UserId u = 0; u < data.num_users; ++u) {
    const auto& items = by_user[u];
    if (items.empty()) continue;
    const auto n_test = static_cast<std::size_t>(std::lround(test_fraction * static_cast<double>(items.size())));
    if (n_test >= items.size()) continue;  // would leave no train pairs: drop user entirely
    if (n_test == 0) {
      for (ItemId i : items) out.train.pairs.emplace_back(u, i);
      continue;
    }
    std::vector<std::uint8_t> in_test(items.size(), 0);
    for (std::size_t idx : stream.sample_indices(items.size(), n_test)) in_test[idx] = 1;
    for (std::size_t j = 0; j < items.size(); ++j) {
      (in_test[j] ? out.test : out.train).pairs.emplace_back(u, items[j]);
    }
  }
  out.train.sort_pairs();
  out.test.sort_pairs();
  return out;
}

double percentile_linear(std::vector<double> values, double p) {
  if (values.empty()) throw std::invalid_argument("percentile of empty multiset");
  std::sort(values.begin(), values.end());
  if (values.size() == 1) return values[0];
  const double rank = p * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(rank);
  if (lo + 1 >= values.size()) return values.back();
  const double frac = rank - static_cast<double>(lo);
  return values[lo] + frac * (values[lo + 1] - values[lo]);
}

PopularityStats compute_popularity(const InteractionDataset& train) {
  if (train.empty()) throw std::invalid_argument("compute_popularity: empty train set");

  PopularityStats stats;
  stats.counts.assign(train.num_items, 0);
  for (const auto& [u, i] : train.pairs) stats.counts[i]++;

  const std::uint32_t max_count = *std::max_element(stats.counts.begin(), stats.counts.end());
  stats.i_pop.resize(train.num_items);
  for (ItemId i = 0; i < train.num_items; ++i) {
    stats.i_pop[i] = static_cast<double>(stats.counts[i]) / static_cast<double>(max_count);
  }

  std::vector<double> counts_d(stats.counts.begin(), stats.counts.end());
  stats.popular_threshold = percentile_linear(std::move(counts_d), 0.8);
  stats.is_popular.resize(train.num_items);
  for (ItemId i = 0; i < train.num_items; ++i) {
    stats.is_popular[i] = static_cast<double>(stats.counts[i]) > stats.popular_threshold ? 1 : 0;
  }
  return stats;
}

IntervenedTest build_intervened_test(const InteractionDataset& test, const PopularityStats& stats,
                                     double target_popular_prop, std::uint64_t seed) {
  if (test.empty()) throw std::invalid_argument("build_intervened_test: empty test set");
  if (!(target_popular_prop > 0.0)) throw std::invalid_argument("build_intervened_test: target must be > 0");

  std::vector<std::pair<UserId, ItemId>> popular, unpopular;
  for (const auto& pr : test.pairs) {
    (stats.is_popular[pr.second] ? popular : unpopular).push_back(pr);
  }
  const double observed =
      static_cast<double>(popular.size()) / static_cast<double>(test.pairs.size());
  if (target_popular_prop > observed + 1e-12) {
    char buf[128];
    std::snprintf(buf, sizeof(buf),
                  "target popular proportion %.4f exceeds observed %.4f (upsampling unsupported)",
                  target_popular_prop, observed);
    throw std::invalid_argument(buf);
  }

  const std::size_t n_unpop = unpopular.size();
  std::size_t keep;
  if (n_unpop == 0) {
    keep = target_popular_prop >= 1.0 ? popular.size() : 0;
  } else {
    keep = static_cast<std::size_t>(std::floor(
        target_popular_prop * static_cast<double>(n_unpop) / (1.0 - target_popular_prop)));
    keep = std::min(keep, popular.size());
  }

  IntervenedTest out;
  out.target_proportion = target_popular_prop;
  out.popular_total = popular.size();
  out.unpopular_total = n_unpop;
  out.popular_kept = keep;
  out.achieved_proportion =
      (keep + n_unpop) == 0 ? 0.0 : static_cast<double>(keep) / static_cast<double>(keep + n_unpop);

  out.test = test;
  out.test.pairs = std::move(unpopular);
  rng::Stream stream(rng::derive(seed, "intervene"));
  for (std::size_t idx : stream.sample_indices(popular.size(), keep)) {
    out.test.pairs.push_back(popular[idx]);
  }
  out.test.sort_pairs();
  return out;
}

void write_canonical(const std::filesystem::path& path, const InteractionDataset& data) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "users=" << data.num_users << " items=" << data.num_items << " pairs=" << data.pairs.size()
      << "\n";
  for (const auto& [u, i] : data.pairs) out << u << '\t' << i << '\n';
  if (!out) throw IoError("write failure on " + path.string());
}

InteractionDataset read_canonical(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string header;
  if (!std::getline(in, header)) throw ParseError(path.string() + ":1: missing header");

  InteractionDataset data;
  std::size_t n_pairs = 0;
  {
    unsigned long long users = 0, items = 0, pairs = 0;
    if (std::sscanf(header.c_str(), "users=%llu items=%llu pairs=%llu", &users, &items, &pairs) != 3)
      throw ParseError(path.string() + ":1: bad header '" + header + "'");
    data.num_users = static_cast<std::uint32_t>(users);
    data.num_items = static_cast<std::uint32_t>(items);
    n_pairs = static_cast<std::size_t>(pairs);
  }

  std::string line;
  std::size_t line_no = 1;
  data.pairs.reserve(n_pairs);
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    unsigned long long u = 0, i = 0;
    if (std::sscanf(line.c_str(), "%llu\t%llu", &u, &i) != 2) malformed(path, line_no, "bad pair line");
    if (u >= data.num_users || i >= data.num_items) malformed(path, line_no, "id out of range");
    data.pairs.emplace_back(static_cast<UserId>(u), static_cast<ItemId>(i));
  }
  if (data.pairs.size() != n_pairs)
    throw ParseError(path.string() + ": header claims " + std::to_string(n_pairs) + " pairs, found " +
                     std::to_string(data.pairs.size()));
  data.sort_pairs();
  if (data.pairs.size() != n_pairs)
    throw ParseError(path.string() + ": duplicate pairs present");
  return data;
}

void write_popularity(const std::filesystem::path& path, const PopularityStats& stats) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "item_id\tcount\ti_pop\tis_popular\n";
  char buf[64];
  for (std::size_t i = 0; i < stats.counts.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g", stats.i_pop[i]);
    out << i << '\t' << stats.counts[i] << '\t' << buf << '\t' << int(stats.is_popular[i]) << '\n';
  }
  if (!out) throw IoError("write failure on " + path.string());
}

}  // namespace dccl
