#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <vector>

#include "dccl/data.hpp"
#include "dccl/model.hpp"
#include "dccl/rng.hpp"
#include "dccl/synth.hpp"

using namespace dccl;

namespace {

// Truncated Pareto on [x_min, 1], written from the distribution definition.
double ref_pareto_icdf(double u, double exponent, double x_min) {
  const double t = std::pow(x_min, 1.0 - exponent);
  return std::pow(t - u * (t - 1.0), 1.0 / (1.0 - exponent));
}

double popular_share(const InteractionDataset& test, const PopularityStats& stats) {
  std::size_t popular = 0;
  for (const auto& [u, i] : test.pairs) popular += stats.is_popular[i] ? 1 : 0;
  return static_cast<double>(popular) / static_cast<double>(test.pairs.size());
}

std::vector<double> counts_as_double(const PopularityStats& stats) {
  return {stats.counts.begin(), stats.counts.end()};
}

}  // namespace

TEST_CASE("config validation rejects out-of-range synthetic parameters") {
  SynthConfig ok;
  CHECK_NOTHROW(ok.validate());
  auto expect_bad = [](auto mutate) {
    SynthConfig c;
    mutate(c);
    CHECK_THROWS_AS(c.validate(), ConfigError);
  };
  expect_bad([](SynthConfig& c) { c.num_users = 0; });
  expect_bad([](SynthConfig& c) { c.num_items = 0; });
  expect_bad([](SynthConfig& c) { c.latent_dim = 0; });
  expect_bad([](SynthConfig& c) { c.density = 0.0; });
  expect_bad([](SynthConfig& c) { c.density = 0.6; });
  expect_bad([](SynthConfig& c) { c.pop_exponent = 1.0; });
  expect_bad([](SynthConfig& c) { c.conformity_mix = -0.1; });
  expect_bad([](SynthConfig& c) { c.conformity_mix = 1.1; });
  expect_bad([](SynthConfig& c) { c.test_density_scale = 0.0; });
  expect_bad([](SynthConfig& c) {
    c.density = 0.5;
    c.test_density_scale = 1.1;
  });
}

TEST_CASE("spearman matches hand-computed rank correlations") {
  std::vector<double> a{1.0, 5.0, 2.0, 9.0};
  std::vector<double> monotone{0.1, 50.0, 0.3, 51.0};
  CHECK(spearman(a, monotone) == doctest::Approx(1.0).epsilon(1e-12));

  std::vector<double> reversed{9.0, 2.0, 5.0, 1.0};
  CHECK(spearman(a, reversed) == doctest::Approx(-1.0).epsilon(1e-12));

  std::vector<double> constant{3.0, 3.0, 3.0, 3.0};
  CHECK(spearman(a, constant) == 0.0);
  CHECK(spearman(constant, a) == 0.0);

  // Tied pair gets the average rank: r = 1.5 / sqrt(3).
  std::vector<double> tied{1.0, 1.0, 2.0};
  std::vector<double> plain{1.0, 2.0, 3.0};
  CHECK(spearman(tied, plain) == doctest::Approx(1.5 / std::sqrt(3.0)).epsilon(1e-12));

  std::vector<double> one{1.0};
  CHECK_THROWS_AS(spearman(one, one), std::invalid_argument);
  std::vector<double> two{1.0, 2.0};
  CHECK_THROWS_AS(spearman(two, a), std::invalid_argument);

  // Invariant under any strictly monotone transform of either side.
  rng::Stream stream(31);
  std::vector<double> x(50), y(50), ex(50);
  for (std::size_t i = 0; i < 50; ++i) {
    x[i] = stream.normal();
    y[i] = stream.normal();
    ex[i] = std::exp(3.0 * x[i]) + 7.0;
  }
  CHECK(spearman(x, y) == doctest::Approx(spearman(ex, y)).epsilon(1e-12));
}

TEST_CASE("power_law_ks accepts matching samples and flags a wrong exponent") {
  rng::Stream stream(17);
  std::vector<double> sample(5000);
  for (double& v : sample) v = ref_pareto_icdf(stream.uniform(), 1.5, 0.1);
  CHECK(power_law_ks(sample, 1.5, 0.1) < 0.04);
  CHECK(power_law_ks(sample, 3.0, 0.1) > 0.08);
  CHECK_THROWS_AS(power_law_ks({}, 1.5, 0.1), std::invalid_argument);
}

TEST_CASE("generated item popularity follows the configured power law") {
  SynthConfig cfg;
  cfg.num_users = 200;
  cfg.num_items = 1000;
  cfg.density = 0.01;
  cfg.seed = 5;
  auto data = generate_synthetic(cfg);
  REQUIRE(data.world.item_pop.size() == 1000);
  CHECK(power_law_ks(data.world.item_pop, cfg.pop_exponent, 0.10) < 0.1);
  for (double p : data.world.item_pop) {
    CHECK(p >= 0.10);
    CHECK(p <= 1.0);
  }
}

TEST_CASE("the synthetic world carries the documented structure") {
  SynthConfig cfg;
  cfg.num_users = 120;
  cfg.num_items = 150;
  cfg.density = 0.02;
  cfg.conformity_mix = 0.3;
  cfg.seed = 11;
  auto data = generate_synthetic(cfg);
  const auto& w = data.world;

  CHECK(w.a == doctest::Approx(8.0 * 0.7).epsilon(1e-12));
  CHECK(w.b == doctest::Approx(16.0 * 0.3).epsilon(1e-12));
  double pop_mean = 0.0;
  for (double p : w.item_pop) pop_mean += p;
  pop_mean /= static_cast<double>(w.item_pop.size());
  CHECK(w.ood_pop == doctest::Approx(pop_mean).epsilon(1e-12));

  for (std::size_t u = 0; u < cfg.num_users; ++u) {
    const auto row = w.user_interest.row(u);
    CHECK(std::abs(dot(row, row) - 1.0) < 1e-9);
    CHECK(w.user_conformity[u] >= 0.0);
    CHECK(w.user_conformity[u] <= 1.0);
  }
  for (std::size_t i = 0; i < cfg.num_items; ++i) {
    const auto row = w.item_content.row(i);
    CHECK(std::abs(dot(row, row) - 1.0) < 1e-9);
  }

  // Zero-padded keys make lexicographic and numeric id order agree.
  CHECK(data.train.user_keys[7] == "u000007");
  CHECK(data.train.item_keys[23] == "i000023");

  // Achieved densities track the targets loosely (sampling noise only).
  const double grid = static_cast<double>(cfg.num_users) * cfg.num_items;
  const double train_density = static_cast<double>(data.train.pairs.size()) / grid;
  CHECK(train_density > 0.5 * cfg.density);
  CHECK(train_density < 2.0 * cfg.density);
}

TEST_CASE("test sets exclude train pairs and users unseen in train") {
  SynthConfig cfg;
  cfg.num_users = 150;
  cfg.num_items = 200;
  cfg.density = 0.015;
  cfg.seed = 21;
  auto data = generate_synthetic(cfg);

  std::set<std::pair<UserId, ItemId>> train_set(data.train.pairs.begin(), data.train.pairs.end());
  std::set<UserId> train_users;
  for (const auto& [u, i] : data.train.pairs) train_users.insert(u);

  for (const auto* test : {&data.test_iid, &data.test_ood}) {
    CHECK(test->num_users == cfg.num_users);
    CHECK(test->num_items == cfg.num_items);
    CHECK(!test->pairs.empty());
    CHECK(std::is_sorted(test->pairs.begin(), test->pairs.end()));
    for (const auto& p : test->pairs) {
      CHECK(!train_set.count(p));
      CHECK(train_users.count(p.first) == 1);
    }
  }
}

TEST_CASE("generation is deterministic in the seed and sensitive to it") {
  SynthConfig cfg;
  cfg.num_users = 100;
  cfg.num_items = 120;
  cfg.density = 0.02;
  cfg.seed = 33;
  auto a = generate_synthetic(cfg);
  auto b = generate_synthetic(cfg);
  CHECK(a.train.pairs == b.train.pairs);
  CHECK(a.test_iid.pairs == b.test_iid.pairs);
  CHECK(a.test_ood.pairs == b.test_ood.pairs);
  CHECK(a.world.item_pop == b.world.item_pop);
  CHECK(a.world.c_train == b.world.c_train);
  CHECK(a.world.c_iid == b.world.c_iid);
  CHECK(a.world.c_ood == b.world.c_ood);

  cfg.seed = 34;
  auto c = generate_synthetic(cfg);
  CHECK(a.train.pairs != c.train.pairs);
}

TEST_CASE("pure interest worlds leave counts uncorrelated with popularity") {
  SynthConfig cfg;
  cfg.num_users = 300;
  cfg.num_items = 500;
  cfg.density = 0.02;
  cfg.conformity_mix = 0.0;
  cfg.seed = 41;
  auto data = generate_synthetic(cfg);
  auto stats = compute_popularity(data.train);
  const double corr = spearman(counts_as_double(stats), data.world.item_pop);
  CHECK(std::abs(corr) < 0.1);
}

TEST_CASE("pure conformity worlds tie counts tightly to popularity") {
  SynthConfig cfg;
  cfg.num_users = 400;
  cfg.num_items = 300;
  cfg.density = 0.05;
  cfg.conformity_mix = 1.0;
  cfg.seed = 43;
  auto data = generate_synthetic(cfg);
  auto stats = compute_popularity(data.train);
  const double corr = spearman(counts_as_double(stats), data.world.item_pop);
  CHECK(corr > 0.8);
}

TEST_CASE("severing the popularity edge drains popular share from the ood test") {
  SynthConfig cfg;
  cfg.num_users = 300;
  cfg.num_items = 400;
  cfg.density = 0.02;
  cfg.conformity_mix = 0.5;
  cfg.seed = 47;
  auto data = generate_synthetic(cfg);
  auto stats = compute_popularity(data.train);
  const double iid_share = popular_share(data.test_iid, stats);
  const double ood_share = popular_share(data.test_ood, stats);
  CHECK(iid_share > ood_share + 0.1);
}

TEST_CASE("disentanglement_score ranks planted structure correctly") {
  SynthConfig cfg;
  cfg.num_users = 80;
  cfg.num_items = 200;
  cfg.density = 0.02;
  cfg.seed = 51;
  auto data = generate_synthetic(cfg);

  DisentangledEmbeddings emb = init_embeddings(80, 200, 4, 99);
  // Plant conformity scores proportional to true popularity.
  emb.user_conformity.fill(0.5);
  for (std::size_t i = 0; i < 200; ++i) {
    auto row = emb.item_conformity.row(i);
    for (double& x : row) x = data.world.item_pop[i];
  }
  auto [conf_corr, int_corr] = disentanglement_score(emb, data.world);
  CHECK(conf_corr == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(std::abs(int_corr) < 0.3);  // random interest table carries no signal

  // Identical tables must give identical correlations.
  emb.user_interest = emb.user_conformity;
  emb.item_interest = emb.item_conformity;
  auto [c2, i2] = disentanglement_score(emb, data.world);
  CHECK(c2 == i2);

  auto small = init_embeddings(10, 10, 4, 1);
  CHECK_THROWS_AS(disentanglement_score(small, data.world), std::invalid_argument);
}

TEST_CASE("write_ground_truth round-trips popularity and conformity") {
  SynthConfig cfg;
  cfg.num_users = 30;
  cfg.num_items = 40;
  cfg.density = 0.05;
  cfg.seed = 61;
  auto data = generate_synthetic(cfg);

  auto dir = std::filesystem::temp_directory_path() / "dccl_synth_gt";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  const auto path = (dir / "ground_truth.tsv").string();
  write_ground_truth(path, data.world);

  std::ifstream in(path);
  std::string kind, line;
  std::size_t items = 0, users = 0;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = line.find('\t', t1 + 1);
    REQUIRE(t2 != std::string::npos);
    kind = line.substr(0, t1);
    const std::size_t id = std::stoul(line.substr(t1 + 1, t2 - t1 - 1));
    const double value = std::stod(line.substr(t2 + 1));
    if (first) {
      CHECK(kind == "item");
      CHECK(id == 0);
      CHECK(value == data.world.item_pop[0]);  // %.17g round-trips exactly
      first = false;
    }
    if (kind == "item") {
      ++items;
      CHECK(value == data.world.item_pop[id]);
    } else {
      CHECK(kind == "user");
      ++users;
      CHECK(value == data.world.user_conformity[id]);
    }
  }
  CHECK(items == 40);
  CHECK(users == 30);
  std::filesystem::remove_all(dir);
}
