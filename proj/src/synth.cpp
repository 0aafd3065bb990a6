#include "dccl/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "dccl/rng.hpp"

namespace dccl {

namespace {

constexpr double kPopMin = 0.10;
// Logit scale of the two mechanisms; the mix parameter trades them off.
constexpr double kInterestScale = 8.0;
constexpr double kConformityScale = 16.0;

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void unit_normalize_rows(Matrix& m) {
  for (std::size_t r = 0; r < m.rows; ++r) {
    auto row = m.row(r);
    const double norm = std::sqrt(dot(row, row));
    if (norm < 1e-12) {
      std::fill(row.begin(), row.end(), 0.0);
      row[0] = 1.0;
      continue;
    }
    for (double& x : row) x /= norm;
  }
}

// Inverse CDF of the truncated Pareto on [x_min, 1], density prop. to
// x^(-exponent).
double pareto_icdf(double u, double exponent, double x_min) {
  const double g = 1.0 - exponent;  // < 0
  const double lo = std::pow(x_min, g);
  return std::pow(lo + u * (1.0 - lo), 1.0 / g);
}

double pareto_cdf(double x, double exponent, double x_min) {
  if (x <= x_min) return 0.0;
  if (x >= 1.0) return 1.0;
  const double g = 1.0 - exponent;
  const double lo = std::pow(x_min, g);
  return (std::pow(x, g) - lo) / (1.0 - lo);
}

}  // namespace

void SynthConfig::validate() const {
  if (num_users < 1 || num_items < 1) throw ConfigError("synth: need at least one user and item");
  if (latent_dim < 1) throw ConfigError("synth: latent_dim must be >= 1");
  if (!(density > 0.0) || density > 0.5)
    throw ConfigError("synth: density must be in (0, 0.5] (expected pairs <= half the grid)");
  if (!(pop_exponent > 1.0)) throw ConfigError("synth: pop_exponent must be > 1");
  if (conformity_mix < 0.0 || conformity_mix > 1.0)
    throw ConfigError("synth: conformity_mix must be in [0, 1]");
  if (!(test_density_scale > 0.0) || density * test_density_scale > 0.5)
    throw ConfigError("synth: test_density_scale out of range");
}

namespace {

// Solves mean sigmoid(logit(u,i) + c) = target for c by bisection.
// logit_at(u, i) must be monotone-free of c; mean is strictly increasing.
template <typename LogitFn>
double calibrate_intercept(std::size_t num_users, std::size_t num_items, const LogitFn& logit_at,
                           double target) {
  const double total = static_cast<double>(num_users) * static_cast<double>(num_items);
  const auto mean_sigma = [&](double c) {
    double s = 0.0;
    for (std::size_t u = 0; u < num_users; ++u)
      for (std::size_t i = 0; i < num_items; ++i) s += sigmoid(logit_at(u, i) + c);
    return s / total;
  };
  double lo = -40.0, hi = 20.0;
  if (mean_sigma(lo) > target || mean_sigma(hi) < target)
    throw std::runtime_error("generate_synthetic: density calibration failed (target outside "
                             "reachable range)");
  for (int iter = 0; iter < 200 && hi - lo > 1e-12; ++iter) {
    const double mid = 0.5 * (lo + hi);
    if (mean_sigma(mid) < target)
      lo = mid;
    else
      hi = mid;
  }
  const double c = 0.5 * (lo + hi);
  const double achieved = mean_sigma(c);
  if (std::abs(achieved - target) > 0.05 * target + 1e-9)
    throw std::runtime_error("generate_synthetic: density calibration failed (|" +
                             format_g17(achieved) + " - " + format_g17(target) + "| too large)");
  return c;
}

InteractionDataset assemble(std::uint32_t num_users, std::uint32_t num_items,
                            std::vector<std::pair<UserId, ItemId>> pairs) {
  InteractionDataset ds;
  ds.num_users = num_users;
  ds.num_items = num_items;
  ds.pairs = std::move(pairs);
  char key[16];
  ds.user_keys.reserve(num_users);
  for (std::uint32_t u = 0; u < num_users; ++u) {
    std::snprintf(key, sizeof(key), "u%06u", u);
    ds.user_keys.emplace_back(key);
  }
  ds.item_keys.reserve(num_items);
  for (std::uint32_t i = 0; i < num_items; ++i) {
    std::snprintf(key, sizeof(key), "i%06u", i);
    ds.item_keys.emplace_back(key);
  }
  ds.rebuild_indices();
  ds.sort_pairs();
  return ds;
}

}  // namespace

SyntheticData generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  SyntheticData out;
  SyntheticWorld& world = out.world;

  rng::Stream world_stream(rng::derive(cfg.seed, "world"));
  world.user_interest = Matrix(cfg.num_users, cfg.latent_dim);
  for (double& x : world.user_interest.data) x = world_stream.normal();
  world.item_content = Matrix(cfg.num_items, cfg.latent_dim);
  for (double& x : world.item_content.data) x = world_stream.normal();
  unit_normalize_rows(world.user_interest);
  unit_normalize_rows(world.item_content);

  rng::Stream pop_stream(rng::derive(cfg.seed, "pop"));
  world.item_pop.resize(cfg.num_items);
  for (double& p : world.item_pop) p = pareto_icdf(pop_stream.uniform(), cfg.pop_exponent, kPopMin);
  world.user_conformity.resize(cfg.num_users);
  for (double& c : world.user_conformity) c = pop_stream.uniform();

  world.a = kInterestScale * (1.0 - cfg.conformity_mix);
  world.b = kConformityScale * cfg.conformity_mix;
  world.ood_pop =
      std::accumulate(world.item_pop.begin(), world.item_pop.end(), 0.0) / cfg.num_items;

  // The interest part of the logit is shared by all three datasets; only the
  // popularity operand changes under the OOD intervention.
  Matrix interest_logit(cfg.num_users, cfg.num_items);
  for (std::size_t u = 0; u < cfg.num_users; ++u) {
    auto row = interest_logit.row(u);
    const auto uvec = world.user_interest.row(u);
    for (std::size_t i = 0; i < cfg.num_items; ++i)
      row[i] = world.a * dot(uvec, world.item_content.row(i));
  }
  const auto logit_obs = [&](std::size_t u, std::size_t i) {
    return interest_logit.row(u)[i] + world.b * world.user_conformity[u] * world.item_pop[i];
  };
  const auto logit_ood = [&](std::size_t u, std::size_t i) {
    return interest_logit.row(u)[i] + world.b * world.user_conformity[u] * world.ood_pop;
  };

  const double test_density = cfg.density * cfg.test_density_scale;
  world.c_train = calibrate_intercept(cfg.num_users, cfg.num_items, logit_obs, cfg.density);
  world.c_iid = calibrate_intercept(cfg.num_users, cfg.num_items, logit_obs, test_density);
  world.c_ood = calibrate_intercept(cfg.num_users, cfg.num_items, logit_ood, test_density);

  // Per-user derived streams keep the draw order independent of any
  // parallel split.
  std::vector<std::pair<UserId, ItemId>> train_pairs;
  std::vector<std::vector<ItemId>> train_items(cfg.num_users);
  for (std::uint32_t u = 0; u < cfg.num_users; ++u) {
    rng::Stream s(rng::derive(cfg.seed, "train", u));
    for (std::uint32_t i = 0; i < cfg.num_items; ++i) {
      if (s.uniform() < sigmoid(logit_obs(u, i) + world.c_train)) {
        train_pairs.emplace_back(u, i);
        train_items[u].push_back(i);
      }
    }
  }

  const auto draw_test = [&](const char* label, const auto& logit, double c) {
    std::vector<std::pair<UserId, ItemId>> pairs;
    for (std::uint32_t u = 0; u < cfg.num_users; ++u) {
      if (train_items[u].empty()) continue;  // users unseen in train are not evaluable
      rng::Stream s(rng::derive(cfg.seed, label, u));
      for (std::uint32_t i = 0; i < cfg.num_items; ++i) {
        if (s.uniform() >= sigmoid(logit(u, i) + c)) continue;
        if (std::binary_search(train_items[u].begin(), train_items[u].end(), i)) continue;
        pairs.emplace_back(u, i);
      }
    }
    return pairs;
  };

  auto iid_pairs = draw_test("test_iid", logit_obs, world.c_iid);
  auto ood_pairs = draw_test("test_ood", logit_ood, world.c_ood);

  out.train = assemble(cfg.num_users, cfg.num_items, std::move(train_pairs));
  out.test_iid = assemble(cfg.num_users, cfg.num_items, std::move(iid_pairs));
  out.test_ood = assemble(cfg.num_users, cfg.num_items, std::move(ood_pairs));
  return out;
}

std::pair<double, double> disentanglement_score(const DisentangledEmbeddings& emb,
                                                const SyntheticWorld& world) {
  if (emb.num_items != world.item_pop.size() || emb.num_users != world.user_conformity.size())
    throw std::invalid_argument("disentanglement_score: embedding/world shape mismatch");

  const auto mean_item_score = [&](const Matrix& user_table, const Matrix& item_table) {
    std::vector<double> mean_user(emb.dim, 0.0);
    for (std::size_t u = 0; u < emb.num_users; ++u)
      axpy(1.0 / static_cast<double>(emb.num_users), user_table.row(u), mean_user);
    std::vector<double> scores(emb.num_items);
    for (std::size_t i = 0; i < emb.num_items; ++i)
      scores[i] = dot(mean_user, item_table.row(i));
    return scores;
  };

  const auto conf_scores = mean_item_score(emb.user_conformity, emb.item_conformity);
  const auto int_scores = mean_item_score(emb.user_interest, emb.item_interest);
  return {spearman(conf_scores, world.item_pop), spearman(int_scores, world.item_pop)};
}

namespace {

std::vector<double> average_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&values](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;  // 1-based
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("spearman: length mismatch");
  if (a.size() < 2) throw std::invalid_argument("spearman: need at least two observations");
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = ra[i] - ma, db = rb[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

double power_law_ks(std::span<const double> values, double exponent, double x_min) {
  if (values.empty()) throw std::invalid_argument("power_law_ks: empty sample");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  double d = 0.0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    const double f = pareto_cdf(sorted[i], exponent, x_min);
    d = std::max(d, std::max(f - static_cast<double>(i) / n,
                             static_cast<double>(i + 1) / n - f));
  }
  return d;
}

void write_ground_truth(const std::string& path, const SyntheticWorld& world) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  for (std::size_t i = 0; i < world.item_pop.size(); ++i)
    out << "item\t" << i << "\t" << format_g17(world.item_pop[i]) << "\n";
  for (std::size_t u = 0; u < world.user_conformity.size(); ++u)
    out << "user\t" << u << "\t" << format_g17(world.user_conformity[u]) << "\n";
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace dccl
