#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dccl/data.hpp"
#include "dccl/losses.hpp"
#include "dccl/model.hpp"
#include "dccl/rng.hpp"

namespace dccl {

struct TrainConfig {
  std::uint32_t dim = 64;
  std::uint32_t batch_size = 512;
  double learning_rate = 0.001;
  double alpha = 0.1;
  double beta = 0.1;
  std::uint32_t epochs = 100;
  std::uint64_t seed = 42;
  Backbone backbone = Backbone::kMf;
  std::uint32_t layers = 2;
  LossMode loss_mode = LossMode::kWeighted;
  bool false_negative_filter = true;
  double init_scale = 0.1;
  // Early stopping: val_fraction of train pairs (per user) are held out and
  // HR@20 on them gates a patience counter. 0 disables validation.
  double val_fraction = 0.1;
  std::uint32_t patience = 10;

  void validate() const;  // throws ConfigError
};

struct TrainingBatch {
  std::vector<UserId> users;
  std::vector<ItemId> pos_items;
  std::vector<ItemId> bpr_neg_items;
  std::vector<double> pos_pop;  // i_pop of each positive
  // In-batch negatives as row indices into this batch; the negative item of
  // row index s is pos_items[s]. Conformity lists are popularity-filtered.
  std::vector<std::vector<std::uint32_t>> interest_neg_rows;
  std::vector<std::vector<std::uint32_t>> conformity_neg_rows;

  std::size_t size() const { return users.size(); }
};

/// Draws batches from a fixed train set. Holds the per-user item adjacency
/// needed for negative rejection.
class BatchSampler {
 public:
  BatchSampler(const InteractionDataset& train, const PopularityStats& stats);

  /// B pairs uniform with replacement; one rejection-sampled BPR negative
  /// per row (error after 100 attempts). In-batch negative lists are built
  /// only when build_contrastive is set: for row r, rows with a different
  /// user, minus (under false_negative_filter) positives the user has in
  /// train; conformity lists additionally drop candidates more popular than
  /// the row's positive.
  TrainingBatch sample_batch(std::uint32_t batch_size, rng::Stream& stream,
                             bool build_contrastive, bool false_negative_filter) const;

  bool user_has(UserId user, ItemId item) const;

 private:
  const InteractionDataset* train_;
  const PopularityStats* stats_;
  std::vector<std::vector<ItemId>> user_items_;  // sorted per user
};

/// Expand a batch into contrastive loss operands (negatives resolved from
/// row indices to item ids).
std::vector<ContrastiveRow> interest_rows(const TrainingBatch& batch);
std::vector<ContrastiveRow> conformity_rows(const TrainingBatch& batch);

/// Mean BPR loss over the batch on the composed two-cause score, with
/// gradients on all four tables.
LossOutput bpr_main_loss(const DisentangledEmbeddings& tables, const TrainingBatch& batch);

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t t = 0;
  std::array<Matrix, kNumTables> m, v;

  static AdamState like(const DisentangledEmbeddings& emb);
};

/// Sparse Adam: t advances once per call; only rows carrying a nonzero
/// gradient touch their moments and parameters. Bias correction uses the
/// global t.
void adam_step(DisentangledEmbeddings& emb, const SparseGrads& grads, AdamState& state, double lr);

struct StepLosses {
  double main = 0.0;
  double interest = 0.0;
  double conformity = 0.0;
  double total = 0.0;
  SparseGrads grads;  // w.r.t. the base tables (propagation backpropagated)
  std::size_t rows_without_negatives = 0;
  std::size_t zero_weight_rows = 0;
};

/// One optimization step's losses and gradients. adj may be null for the MF
/// backbone; for LightGCN the forward propagates the tables and the backward
/// applies the same symmetric operator to the gradients.
StepLosses compute_step_loss(const DisentangledEmbeddings& emb, const NormAdjacency* adj,
                             const TrainConfig& cfg, const TrainingBatch& batch);

struct EpochLog {
  std::uint32_t epoch = 0;  // 1-based
  double main_loss = 0.0;
  double int_loss = 0.0;
  double conf_loss = 0.0;
  double total = 0.0;
  double val_hr20 = -1.0;  // -1 when validation is disabled
  double wall_seconds = 0.0;
};

struct TrainResult {
  DisentangledEmbeddings emb;
  std::vector<EpochLog> log;
  std::uint32_t epochs_run = 0;
  bool early_stopped = false;
  double best_val_hr20 = -1.0;
};

/// Full training loop. When out_dir is non-empty, writes checkpoint.bin
/// (overwritten each epoch; rewritten with the best-validation tables on
/// early stop) and training_log.tsv (header plus the epoch rows below).
/// Deterministic for a fixed config, seed, and thread cap; wall_seconds is
/// the only non-reproducible output.
TrainResult train(const TrainConfig& cfg, const SplitDataset& split, const PopularityStats& stats,
                  const std::string& out_dir = "");

/// epoch \t main_loss \t int_loss \t conf_loss \t total \t val_HR@20 \t wall_seconds
void write_training_log(const std::string& path, const std::vector<EpochLog>& log);

}  // namespace dccl
