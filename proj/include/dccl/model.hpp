#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "dccl/common.hpp"
#include "dccl/data.hpp"

namespace dccl {

enum class Backbone : std::uint32_t { kMf = 0, kLightGcn = 1 };

enum class TableId : int {
  kUserInterest = 0,
  kUserConformity = 1,
  kItemInterest = 2,
  kItemConformity = 3,
};
inline constexpr int kNumTables = 4;

/// Four dense embedding tables: interest and conformity for users and items.
struct DisentangledEmbeddings {
  std::uint32_t num_users = 0;
  std::uint32_t num_items = 0;
  std::uint32_t dim = 0;
  Matrix user_interest, user_conformity, item_interest, item_conformity;

  Matrix& table(TableId id) {
    switch (id) {
      case TableId::kUserInterest: return user_interest;
      case TableId::kUserConformity: return user_conformity;
      case TableId::kItemInterest: return item_interest;
      default: return item_conformity;
    }
  }
  const Matrix& table(TableId id) const {
    return const_cast<DisentangledEmbeddings*>(this)->table(id);
  }
};

/// Symmetric degree-normalized bipartite adjacency in CSR form. Nodes
/// 0..num_users-1 are users, num_users..num_users+num_items-1 are items;
/// entry (u,i) = 1/sqrt(deg(u)*deg(i)).
struct NormAdjacency {
  std::uint32_t num_users = 0;
  std::uint32_t num_items = 0;
  std::vector<std::size_t> row_ptr;
  std::vector<std::uint32_t> col;
  std::vector<double> val;

  std::uint32_t num_nodes() const { return num_users + num_items; }
};

DisentangledEmbeddings init_embeddings(std::uint32_t num_users, std::uint32_t num_items,
                                       std::uint32_t dim, std::uint64_t seed, double scale = 0.1);

/// Requires every user and item to have degree >= 1.
NormAdjacency build_norm_adjacency(const InteractionDataset& train);

/// Layer-averaged linear propagation: output = mean of A^l * E for
/// l = 0..layers, applied to the interest pair and the conformity pair of
/// tables independently. layers = 0 is the identity.
DisentangledEmbeddings lightgcn_propagate(const DisentangledEmbeddings& emb, const NormAdjacency& adj,
                                          std::uint32_t layers);

/// Applies the propagation operator to a stacked (users+items) x dim matrix
/// in place. The operator is symmetric, so this is also the backward map.
void propagate_stacked(Matrix& stacked, const NormAdjacency& adj, std::uint32_t layers);

/// Dot-product similarity S(w, v) = w.v.
double similarity(std::span<const double> w, std::span<const double> v);

/// Ranking score: interest dot plus conformity dot.
double score(std::span<const double> user_int, std::span<const double> user_conf,
             std::span<const double> item_int, std::span<const double> item_conf);

struct GatheredRows {
  Matrix user_interest, user_conformity, item_interest, item_conformity;
};

/// MF backbone forward: plain row gathers (no propagation). Throws on
/// out-of-range ids.
GatheredRows mf_forward(const DisentangledEmbeddings& emb, std::span<const UserId> users,
                        std::span<const ItemId> items);

// Checkpoint layout (little-endian):
//   bytes 0-7   magic "DCCLCKPT"
//   u32         version (1)
//   u32         num_users
//   u32         num_items
//   u32         dim
//   u32         backbone (0 = mf, 1 = lightgcn)
//   u32         layers
// followed by the four tables as row-major float32 in the order
// user_interest, user_conformity, item_interest, item_conformity.
struct CheckpointMeta {
  Backbone backbone = Backbone::kMf;
  std::uint32_t layers = 0;
};

void save_checkpoint(const std::filesystem::path& path, const DisentangledEmbeddings& emb,
                     const CheckpointMeta& meta);
std::pair<DisentangledEmbeddings, CheckpointMeta> load_checkpoint(const std::filesystem::path& path);

}  // namespace dccl
