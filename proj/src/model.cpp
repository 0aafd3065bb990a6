#include "dccl/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "dccl/rng.hpp"

static_assert(std::endian::native == std::endian::little, "checkpoint writer assumes a little-endian host");

namespace dccl {

DisentangledEmbeddings init_embeddings(std::uint32_t num_users, std::uint32_t num_items,
                                       std::uint32_t dim, std::uint64_t seed, double scale) {
  if (dim < 1) throw std::invalid_argument("init_embeddings: dim must be >= 1");
  if (!(scale > 0.0)) throw std::invalid_argument("init_embeddings: scale must be > 0");

  DisentangledEmbeddings emb;
  emb.num_users = num_users;
  emb.num_items = num_items;
  emb.dim = dim;
  emb.user_interest = Matrix(num_users, dim);
  emb.user_conformity = Matrix(num_users, dim);
  emb.item_interest = Matrix(num_items, dim);
  emb.item_conformity = Matrix(num_items, dim);

  rng::Stream stream(rng::derive(seed, "init_embeddings"));
  for (int t = 0; t < kNumTables; ++t) {
    Matrix& table = emb.table(static_cast<TableId>(t));
    for (double& x : table.data) x = stream.normal(0.0, scale);
  }
  return emb;
}

NormAdjacency build_norm_adjacency(const InteractionDataset& train) {
  const auto user_deg = train.user_degrees();
  const auto item_deg = train.item_degrees();
  for (UserId u = 0; u < train.num_users; ++u) {
    if (user_deg[u] == 0) throw std::invalid_argument("build_norm_adjacency: isolated user " + std::to_string(u));
  }
  for (ItemId i = 0; i < train.num_items; ++i) {
    if (item_deg[i] == 0) throw std::invalid_argument("build_norm_adjacency: isolated item " + std::to_string(i));
  }

  NormAdjacency adj;
  adj.num_users = train.num_users;
  adj.num_items = train.num_items;
  const std::size_t n = adj.num_nodes();
  adj.row_ptr.assign(n + 1, 0);
  for (const auto& [u, i] : train.pairs) {
    adj.row_ptr[u + 1]++;
    adj.row_ptr[train.num_users + i + 1]++;
  }
  for (std::size_t r = 0; r < n; ++r) adj.row_ptr[r + 1] += adj.row_ptr[r];

  adj.col.resize(2 * train.pairs.size());
  adj.val.resize(2 * train.pairs.size());
  std::vector<std::size_t> cursor(adj.row_ptr.begin(), adj.row_ptr.end() - 1);
  for (const auto& [u, i] : train.pairs) {  // pairs sorted: user rows come out sorted
    const double w = 1.0 / std::sqrt(static_cast<double>(user_deg[u]) * static_cast<double>(item_deg[i]));
    const std::uint32_t item_node = train.num_users + i;
    adj.col[cursor[u]] = item_node;
    adj.val[cursor[u]++] = w;
    adj.col[cursor[item_node]] = u;
    adj.val[cursor[item_node]++] = w;
  }
  return adj;
}

namespace {

// out = adj * in, rows computed independently.
void spmm(const NormAdjacency& adj, const Matrix& in, Matrix& out) {
  const std::size_t d = in.cols;
  parallel_for(adj.num_nodes(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t r = begin; r < end; ++r) {
      double* dst = out.data.data() + r * d;
      std::fill(dst, dst + d, 0.0);
      for (std::size_t e = adj.row_ptr[r]; e < adj.row_ptr[r + 1]; ++e) {
        const double w = adj.val[e];
        const double* src = in.data.data() + static_cast<std::size_t>(adj.col[e]) * d;
        for (std::size_t c = 0; c < d; ++c) dst[c] += w * src[c];
      }
    }
  });
}

}  // namespace

void propagate_stacked(Matrix& stacked, const NormAdjacency& adj, std::uint32_t layers) {
  if (layers == 0) return;
  Matrix sum = stacked;
  Matrix cur = stacked;
  Matrix next(stacked.rows, stacked.cols);
  for (std::uint32_t l = 0; l < layers; ++l) {
    spmm(adj, cur, next);
    std::swap(cur, next);
    for (std::size_t k = 0; k < sum.data.size(); ++k) sum.data[k] += cur.data[k];
  }
  const double inv = 1.0 / static_cast<double>(layers + 1);
  for (std::size_t k = 0; k < sum.data.size(); ++k) stacked.data[k] = sum.data[k] * inv;
}

DisentangledEmbeddings lightgcn_propagate(const DisentangledEmbeddings& emb, const NormAdjacency& adj,
                                          std::uint32_t layers) {
  DisentangledEmbeddings out = emb;
  if (layers == 0) return out;

  const std::size_t d = emb.dim;
  const std::size_t n = adj.num_nodes();
  Matrix stacked(n, d);
  auto run = [&](const Matrix& users, const Matrix& items, Matrix& users_out, Matrix& items_out) {
    std::memcpy(stacked.data.data(), users.data.data(), users.data.size() * sizeof(double));
    std::memcpy(stacked.data.data() + users.data.size(), items.data.data(), items.data.size() * sizeof(double));
    propagate_stacked(stacked, adj, layers);
    std::memcpy(users_out.data.data(), stacked.data.data(), users.data.size() * sizeof(double));
    std::memcpy(items_out.data.data(), stacked.data.data() + users.data.size(), items.data.size() * sizeof(double));
  };
  // The two causes propagate independently: no cross-cause mixing.
  run(emb.user_interest, emb.item_interest, out.user_interest, out.item_interest);
  run(emb.user_conformity, emb.item_conformity, out.user_conformity, out.item_conformity);
  return out;
}

double similarity(std::span<const double> w, std::span<const double> v) {
  if (w.size() != v.size()) throw std::invalid_argument("similarity: dimension mismatch");
  return dot(w, v);
}

double score(std::span<const double> user_int, std::span<const double> user_conf,
             std::span<const double> item_int, std::span<const double> item_conf) {
  if (user_int.size() != item_int.size() || user_conf.size() != item_conf.size())
    throw std::invalid_argument("score: dimension mismatch");
  return dot(user_int, item_int) + dot(user_conf, item_conf);
}

GatheredRows mf_forward(const DisentangledEmbeddings& emb, std::span<const UserId> users,
                        std::span<const ItemId> items) {
  for (UserId u : users) {
    if (u >= emb.num_users) throw std::out_of_range("mf_forward: user id " + std::to_string(u));
  }
  for (ItemId i : items) {
    if (i >= emb.num_items) throw std::out_of_range("mf_forward: item id " + std::to_string(i));
  }
  GatheredRows g;
  g.user_interest = Matrix(users.size(), emb.dim);
  g.user_conformity = Matrix(users.size(), emb.dim);
  g.item_interest = Matrix(items.size(), emb.dim);
  g.item_conformity = Matrix(items.size(), emb.dim);
  for (std::size_t r = 0; r < users.size(); ++r) {
    std::copy_n(emb.user_interest.row(users[r]).data(), emb.dim, g.user_interest.row(r).data());
    std::copy_n(emb.user_conformity.row(users[r]).data(), emb.dim, g.user_conformity.row(r).data());
  }
  for (std::size_t r = 0; r < items.size(); ++r) {
    std::copy_n(emb.item_interest.row(items[r]).data(), emb.dim, g.item_interest.row(r).data());
    std::copy_n(emb.item_conformity.row(items[r]).data(), emb.dim, g.item_conformity.row(r).data());
  }
  return g;
}

namespace {

constexpr char kMagic[8] = {'D', 'C', 'C', 'L', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ofstream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t read_u32(std::ifstream& in, const std::filesystem::path& path) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(v))) throw IoError("truncated checkpoint " + path.string());
  return v;
}

void write_table_f32(std::ofstream& out, const Matrix& m) {
  std::vector<float> buf(m.data.size());
  for (std::size_t k = 0; k < m.data.size(); ++k) buf[k] = static_cast<float>(m.data[k]);
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

void read_table_f32(std::ifstream& in, Matrix& m, const std::filesystem::path& path) {
  std::vector<float> buf(m.data.size());
  if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float))))
    throw IoError("truncated checkpoint " + path.string());
  for (std::size_t k = 0; k < m.data.size(); ++k) m.data[k] = static_cast<double>(buf[k]);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const DisentangledEmbeddings& emb,
                     const CheckpointMeta& meta) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(kMagic, sizeof(kMagic));
  write_u32(out, kVersion);
  write_u32(out, emb.num_users);
  write_u32(out, emb.num_items);
  write_u32(out, emb.dim);
  write_u32(out, static_cast<std::uint32_t>(meta.backbone));
  write_u32(out, meta.layers);
  write_table_f32(out, emb.user_interest);
  write_table_f32(out, emb.user_conformity);
  write_table_f32(out, emb.item_interest);
  write_table_f32(out, emb.item_conformity);
  if (!out) throw IoError("write failure on " + path.string());
}

std::pair<DisentangledEmbeddings, CheckpointMeta> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw IoError("not a checkpoint file: " + path.string());
  const std::uint32_t version = read_u32(in, path);
  if (version != kVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));

  DisentangledEmbeddings emb;
  emb.num_users = read_u32(in, path);
  emb.num_items = read_u32(in, path);
  emb.dim = read_u32(in, path);
  CheckpointMeta meta;
  const std::uint32_t backbone = read_u32(in, path);
  if (backbone > 1) throw IoError("bad backbone tag in " + path.string());
  meta.backbone = static_cast<Backbone>(backbone);
  meta.layers = read_u32(in, path);

  emb.user_interest = Matrix(emb.num_users, emb.dim);
  emb.user_conformity = Matrix(emb.num_users, emb.dim);
  emb.item_interest = Matrix(emb.num_items, emb.dim);
  emb.item_conformity = Matrix(emb.num_items, emb.dim);
  read_table_f32(in, emb.user_interest, path);
  read_table_f32(in, emb.user_conformity, path);
  read_table_f32(in, emb.item_interest, path);
  read_table_f32(in, emb.item_conformity, path);
  return {std::move(emb), meta};
}

}  // namespace dccl
