#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <vector>

#include "dccl/data.hpp"
#include "dccl/model.hpp"
#include "dccl/rng.hpp"

using namespace dccl;
namespace fs = std::filesystem;

namespace {

InteractionDataset from_pairs(std::uint32_t nu, std::uint32_t ni,
                              std::vector<std::pair<UserId, ItemId>> pairs) {
  InteractionDataset d;
  d.num_users = nu;
  d.num_items = ni;
  d.pairs = std::move(pairs);
  for (UserId u = 0; u < nu; ++u) d.user_keys.push_back("u" + std::to_string(u));
  for (ItemId i = 0; i < ni; ++i) d.item_keys.push_back("i" + std::to_string(i));
  d.rebuild_indices();
  d.sort_pairs();
  return d;
}

double adjacency_entry(const NormAdjacency& adj, std::uint32_t row, std::uint32_t col) {
  for (std::size_t k = adj.row_ptr[row]; k < adj.row_ptr[row + 1]; ++k) {
    if (adj.col[k] == col) return adj.val[k];
  }
  return 0.0;
}

}  // namespace

TEST_CASE("init_embeddings is seed-deterministic and table-distinct") {
  auto a = init_embeddings(5, 7, 8, 42);
  auto b = init_embeddings(5, 7, 8, 42);
  CHECK(a.user_interest.data == b.user_interest.data);
  CHECK(a.item_conformity.data == b.item_conformity.data);
  CHECK(a.user_interest.data != a.user_conformity.data);
  auto c = init_embeddings(5, 7, 8, 43);
  CHECK(a.user_interest.data != c.user_interest.data);
  CHECK(a.user_interest.rows == 5);
  CHECK(a.item_interest.rows == 7);
  CHECK(a.dim == 8);
}

TEST_CASE("init_embeddings scale controls the sample standard deviation") {
  auto e = init_embeddings(800, 800, 64, 1, 0.1);
  double sum = 0, sq = 0;
  std::size_t n = 0;
  for (auto t : {TableId::kUserInterest, TableId::kUserConformity, TableId::kItemInterest,
                 TableId::kItemConformity}) {
    for (double x : e.table(t).data) {
      sum += x;
      sq += x * x;
      ++n;
    }
  }
  const double mean = sum / static_cast<double>(n);
  const double sd = std::sqrt(sq / static_cast<double>(n) - mean * mean);
  CHECK(n >= 100000);
  CHECK(sd == doctest::Approx(0.1).epsilon(0.05));
  CHECK(std::abs(mean) < 0.005);
}

TEST_CASE("init_embeddings handles the 1x1 corner") {
  auto e = init_embeddings(1, 1, 1, 9);
  CHECK(e.user_interest.data.size() == 1);
  CHECK(std::isfinite(e.user_interest.data[0]));
}

TEST_CASE("similarity and score are plain dot compositions") {
  std::vector<double> w{1, 2}, v{3, 4}, zero{0, 0};
  CHECK(similarity(w, v) == doctest::Approx(11.0));
  CHECK(similarity(w, zero) == doctest::Approx(0.0));
  CHECK(similarity(w, v) == similarity(v, w));

  std::vector<double> iu{1, 0}, ii{1, 0}, cu{0, 1}, ci{0, 1};
  CHECK(score(iu, cu, ii, ci) == doctest::Approx(2.0));
  CHECK(score(zero, zero, zero, zero) == doctest::Approx(0.0));
  std::vector<double> iu2{1, 0}, ii2{0, 1};  // orthogonal pairs
  CHECK(score(iu2, cu, ii2, std::vector<double>{1, 0}) == doctest::Approx(0.0));
  // Bilinearity in the user vectors.
  rng::Stream stream(4);
  std::vector<double> a(6), b(6), c(6), d(6);
  for (auto* vec : {&a, &b, &c, &d})
    for (auto& x : *vec) x = stream.normal();
  std::vector<double> a3(6), b3(6);
  for (int i = 0; i < 6; ++i) {
    a3[i] = 3.0 * a[i];
    b3[i] = 3.0 * b[i];
  }
  CHECK(score(a3, b3, c, d) == doctest::Approx(3.0 * score(a, b, c, d)).epsilon(1e-12));
}

TEST_CASE("mf_forward gathers rows verbatim, repeats included") {
  auto e = init_embeddings(4, 5, 6, 3);
  std::vector<UserId> users{0, 2, 2};
  std::vector<ItemId> items{1, 4, 4};
  auto g = mf_forward(e, users, items);
  CHECK(std::vector<double>(g.user_interest.row(0).begin(), g.user_interest.row(0).end()) ==
        std::vector<double>(e.user_interest.row(0).begin(), e.user_interest.row(0).end()));
  CHECK(std::vector<double>(g.user_conformity.row(1).begin(), g.user_conformity.row(1).end()) ==
        std::vector<double>(g.user_conformity.row(2).begin(), g.user_conformity.row(2).end()));
  CHECK(std::vector<double>(g.item_interest.row(1).begin(), g.item_interest.row(1).end()) ==
        std::vector<double>(e.item_interest.row(4).begin(), e.item_interest.row(4).end()));
  std::vector<UserId> out_of_range{9};
  std::vector<ItemId> one_item{0};
  CHECK_THROWS_AS(mf_forward(e, out_of_range, one_item), std::out_of_range);
}

TEST_CASE("build_norm_adjacency on a single pair gives unit weights") {
  auto d = from_pairs(1, 1, {{0, 0}});
  auto adj = build_norm_adjacency(d);
  CHECK(adj.num_nodes() == 2);
  CHECK(adjacency_entry(adj, 0, 1) == doctest::Approx(1.0));
  CHECK(adjacency_entry(adj, 1, 0) == doctest::Approx(1.0));
}

TEST_CASE("build_norm_adjacency divides by sqrt of both degrees") {
  // One user with 4 items, each item of degree 1: 1/sqrt(4*1) = 1/2.
  auto d = from_pairs(1, 4, {{0, 0}, {0, 1}, {0, 2}, {0, 3}});
  auto adj = build_norm_adjacency(d);
  for (ItemId i = 0; i < 4; ++i) {
    CHECK(adjacency_entry(adj, 0, 1 + i) == doctest::Approx(0.5));
    CHECK(adjacency_entry(adj, 1 + i, 0) == doctest::Approx(0.5));
  }
}

TEST_CASE("build_norm_adjacency is symmetric on random bipartite graphs") {
  rng::Stream stream(8);
  std::set<std::pair<UserId, ItemId>> s;
  while (s.size() < 60) {
    s.insert({static_cast<UserId>(stream.below(9)), static_cast<ItemId>(stream.below(7))});
  }
  // Ensure no isolated nodes.
  for (UserId u = 0; u < 9; ++u) s.insert({u, 0});
  for (ItemId i = 0; i < 7; ++i) s.insert({0, i});
  auto d = from_pairs(9, 7, {s.begin(), s.end()});
  auto adj = build_norm_adjacency(d);
  for (std::uint32_t r = 0; r < adj.num_nodes(); ++r) {
    for (std::size_t k = adj.row_ptr[r]; k < adj.row_ptr[r + 1]; ++k) {
      CHECK(adjacency_entry(adj, adj.col[k], r) == doctest::Approx(adj.val[k]).epsilon(1e-15));
    }
  }
}

TEST_CASE("build_norm_adjacency rejects isolated nodes") {
  InteractionDataset d;
  d.num_users = 2;  // user 1 isolated
  d.num_items = 1;
  d.pairs = {{0, 0}};
  CHECK_THROWS_AS(build_norm_adjacency(d), std::invalid_argument);
}

TEST_CASE("lightgcn_propagate with zero layers is the identity") {
  auto d = from_pairs(3, 3, {{0, 0}, {1, 1}, {2, 2}, {0, 1}, {1, 2}, {2, 0}});
  auto adj = build_norm_adjacency(d);
  auto e = init_embeddings(3, 3, 4, 12);
  auto p = lightgcn_propagate(e, adj, 0);
  CHECK(p.user_interest.data == e.user_interest.data);
  CHECK(p.item_conformity.data == e.item_conformity.data);
}

TEST_CASE("lightgcn_propagate single pair one layer averages the two endpoints") {
  auto d = from_pairs(1, 1, {{0, 0}});
  auto adj = build_norm_adjacency(d);
  auto e = init_embeddings(1, 1, 3, 5);
  auto p = lightgcn_propagate(e, adj, 1);
  for (int k = 0; k < 3; ++k) {
    const double want_u = 0.5 * (e.user_interest.data[k] + e.item_interest.data[k]);
    CHECK(p.user_interest.data[k] == doctest::Approx(want_u).epsilon(1e-12));
    const double want_i = 0.5 * (e.item_conformity.data[k] + e.user_conformity.data[k]);
    CHECK(p.item_conformity.data[k] == doctest::Approx(want_i).epsilon(1e-12));
  }
}

TEST_CASE("lightgcn_propagate is linear in the tables") {
  auto d = from_pairs(4, 5, {{0, 0}, {0, 1}, {1, 1}, {1, 2}, {2, 2}, {2, 3}, {3, 3}, {3, 4}, {0, 4}});
  auto adj = build_norm_adjacency(d);
  auto x = init_embeddings(4, 5, 6, 21);
  auto y = init_embeddings(4, 5, 6, 22);
  const double a = 1.7, b = -0.4;
  DisentangledEmbeddings mix = x;
  for (auto t : {TableId::kUserInterest, TableId::kUserConformity, TableId::kItemInterest,
                 TableId::kItemConformity}) {
    auto& m = mix.table(t);
    const auto& yt = y.table(t);
    for (std::size_t k = 0; k < m.data.size(); ++k) m.data[k] = a * m.data[k] + b * yt.data[k];
  }
  auto px = lightgcn_propagate(x, adj, 3);
  auto py = lightgcn_propagate(y, adj, 3);
  auto pm = lightgcn_propagate(mix, adj, 3);
  for (auto t : {TableId::kUserInterest, TableId::kItemConformity}) {
    const auto& got = pm.table(t);
    const auto& ex = px.table(t);
    const auto& ey = py.table(t);
    for (std::size_t k = 0; k < got.data.size(); ++k) {
      const double want = a * ex.data[k] + b * ey.data[k];
      CHECK(got.data[k] == doctest::Approx(want).epsilon(1e-10));
    }
  }
}

TEST_CASE("propagate_stacked matches the per-cause propagation") {
  auto d = from_pairs(3, 4, {{0, 0}, {0, 1}, {1, 1}, {1, 2}, {2, 2}, {2, 3}, {0, 3}});
  auto adj = build_norm_adjacency(d);
  auto e = init_embeddings(3, 4, 5, 31);
  auto p = lightgcn_propagate(e, adj, 2);

  Matrix stacked(7, 5);
  for (std::uint32_t u = 0; u < 3; ++u)
    for (int k = 0; k < 5; ++k) stacked.data[u * 5 + k] = e.user_interest.data[u * 5 + k];
  for (std::uint32_t i = 0; i < 4; ++i)
    for (int k = 0; k < 5; ++k) stacked.data[(3 + i) * 5 + k] = e.item_interest.data[i * 5 + k];
  propagate_stacked(stacked, adj, 2);
  for (std::uint32_t u = 0; u < 3; ++u)
    for (int k = 0; k < 5; ++k)
      CHECK(stacked.data[u * 5 + k] == doctest::Approx(p.user_interest.data[u * 5 + k]).epsilon(1e-12));
  for (std::uint32_t i = 0; i < 4; ++i)
    for (int k = 0; k < 5; ++k)
      CHECK(stacked.data[(3 + i) * 5 + k] ==
            doctest::Approx(p.item_interest.data[i * 5 + k]).epsilon(1e-12));
}

TEST_CASE("checkpoints round-trip through the float32 file format") {
  auto e = init_embeddings(6, 9, 4, 77);
  CheckpointMeta meta;
  meta.backbone = Backbone::kLightGcn;
  meta.layers = 3;
  auto path = fs::temp_directory_path() / "dccl_ckpt.bin";
  save_checkpoint(path, e, meta);

  auto [loaded, got_meta] = load_checkpoint(path);
  CHECK(got_meta.backbone == Backbone::kLightGcn);
  CHECK(got_meta.layers == 3);
  CHECK(loaded.num_users == 6);
  CHECK(loaded.num_items == 9);
  CHECK(loaded.dim == 4);
  // Values pass through a float32 quantization exactly once.
  for (std::size_t k = 0; k < e.user_interest.data.size(); ++k) {
    CHECK(loaded.user_interest.data[k] == static_cast<double>(static_cast<float>(e.user_interest.data[k])));
  }
  // A second save of the loaded tables is byte-identical (quantization is idempotent).
  auto path2 = fs::temp_directory_path() / "dccl_ckpt2.bin";
  save_checkpoint(path2, loaded, got_meta);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(b1 == b2);
  CHECK(b1.substr(0, 8) == "DCCLCKPT");
}

TEST_CASE("checkpoint loading rejects bad magic and truncation") {
  auto path = fs::temp_directory_path() / "dccl_ckpt_bad.bin";
  {
    std::ofstream out(path, std::ios::binary);
    out << "NOTMAGIC" << std::string(24, '\0');
  }
  CHECK_THROWS_AS(load_checkpoint(path), std::runtime_error);

  auto e = init_embeddings(2, 2, 2, 1);
  auto good = fs::temp_directory_path() / "dccl_ckpt_trunc.bin";
  save_checkpoint(good, e, CheckpointMeta{});
  auto bytes = [&] {
    std::ifstream in(good, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  }();
  {
    std::ofstream out(good, std::ios::binary);
    out << bytes.substr(0, bytes.size() - 5);
  }
  CHECK_THROWS_AS(load_checkpoint(good), std::runtime_error);
}
