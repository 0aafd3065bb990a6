#include "dccl/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <utility>

#include "dccl/eval.hpp"

namespace dccl {

void TrainConfig::validate() const {
  if (dim < 1) throw ConfigError("dim must be >= 1");
  if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (alpha < 0.0 || beta < 0.0) throw ConfigError("alpha and beta must be non-negative");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(init_scale > 0.0)) throw ConfigError("init_scale must be positive");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0))
    throw ConfigError("val_fraction must be in [0, 1)");
  if (patience < 1) throw ConfigError("patience must be >= 1");
}

BatchSampler::BatchSampler(const InteractionDataset& train, const PopularityStats& stats)
    : train_(&train), stats_(&stats), user_items_(train.items_by_user()) {
  if (stats.i_pop.size() != train.num_items)
    throw std::invalid_argument("BatchSampler: popularity stats do not match the item space");
}

bool BatchSampler::user_has(UserId user, ItemId item) const {
  if (user >= user_items_.size()) return false;
  const auto& items = user_items_[user];
  return std::binary_search(items.begin(), items.end(), item);
}

TrainingBatch BatchSampler::sample_batch(std::uint32_t batch_size, rng::Stream& stream,
                                         bool build_contrastive,
                                         bool false_negative_filter) const {
  if (batch_size < 2) throw std::invalid_argument("sample_batch: batch size must be >= 2");
  if (train_->pairs.empty()) throw std::invalid_argument("sample_batch: empty train set");

  TrainingBatch batch;
  batch.users.resize(batch_size);
  batch.pos_items.resize(batch_size);
  batch.bpr_neg_items.resize(batch_size);
  batch.pos_pop.resize(batch_size);

  for (std::uint32_t r = 0; r < batch_size; ++r) {
    const auto& [u, i] = train_->pairs[stream.below(train_->pairs.size())];
    batch.users[r] = u;
    batch.pos_items[r] = i;
    batch.pos_pop[r] = stats_->i_pop[i];

    bool found = false;
    for (int attempt = 0; attempt < 100; ++attempt) {
      const auto j = static_cast<ItemId>(stream.below(train_->num_items));
      if (!user_has(u, j)) {
        batch.bpr_neg_items[r] = j;
        found = true;
        break;
      }
    }
    if (!found)
      throw std::runtime_error(
          "sample_batch: no BPR negative found in 100 attempts (user interacted with nearly the "
          "whole catalog)");
  }

  if (build_contrastive) {
    batch.interest_neg_rows.resize(batch_size);
    batch.conformity_neg_rows.resize(batch_size);
    std::vector<std::pair<std::uint32_t, double>> cand;
    for (std::uint32_t r = 0; r < batch_size; ++r) {
      auto& interest = batch.interest_neg_rows[r];
      cand.clear();
      for (std::uint32_t s = 0; s < batch_size; ++s) {
        if (s == r || batch.users[s] == batch.users[r]) continue;
        if (false_negative_filter && user_has(batch.users[r], batch.pos_items[s])) continue;
        interest.push_back(s);
        cand.emplace_back(s, batch.pos_pop[s]);
      }
      batch.conformity_neg_rows[r] = filter_conformity_negatives(batch.pos_pop[r], cand);
    }
  }
  return batch;
}

namespace {

std::vector<ContrastiveRow> rows_from(const TrainingBatch& batch,
                                      const std::vector<std::vector<std::uint32_t>>& neg_rows) {
  if (neg_rows.size() != batch.size())
    throw std::invalid_argument("batch has no in-batch negative lists (sampled without them?)");
  std::vector<ContrastiveRow> rows(batch.size());
  for (std::size_t r = 0; r < batch.size(); ++r) {
    rows[r].user = batch.users[r];
    rows[r].pos_item = batch.pos_items[r];
    rows[r].i_pop = batch.pos_pop[r];
    rows[r].neg_items.reserve(neg_rows[r].size());
    for (std::uint32_t s : neg_rows[r]) rows[r].neg_items.push_back(batch.pos_items[s]);
  }
  return rows;
}

}  // namespace

std::vector<ContrastiveRow> interest_rows(const TrainingBatch& batch) {
  return rows_from(batch, batch.interest_neg_rows);
}

std::vector<ContrastiveRow> conformity_rows(const TrainingBatch& batch) {
  return rows_from(batch, batch.conformity_neg_rows);
}

LossOutput bpr_main_loss(const DisentangledEmbeddings& tables, const TrainingBatch& batch) {
  const std::size_t b = batch.size();
  if (b == 0) throw std::invalid_argument("bpr_main_loss: empty batch");
  LossOutput out;
  out.grads = SparseGrads(static_cast<std::uint32_t>(tables.dim));
  const double inv = 1.0 / static_cast<double>(b);

  for (std::size_t r = 0; r < b; ++r) {
    const UserId u = batch.users[r];
    const ItemId p = batch.pos_items[r];
    const ItemId n = batch.bpr_neg_items[r];
    if (u >= tables.num_users || p >= tables.num_items || n >= tables.num_items)
      throw std::out_of_range("bpr_main_loss: batch id out of range");

    const auto ui = tables.user_interest.row(u);
    const auto uc = tables.user_conformity.row(u);
    const double s_pos = score(ui, uc, tables.item_interest.row(p), tables.item_conformity.row(p));
    const double s_neg = score(ui, uc, tables.item_interest.row(n), tables.item_conformity.row(n));
    const BprTerm term = bpr_loss(s_pos, s_neg);
    out.value += term.value * inv;

    const double gp = term.d_pos * inv;
    const double gn = term.d_neg * inv;
    auto gu_int = out.grads.at(TableId::kUserInterest, u);
    axpy(gp, tables.item_interest.row(p), gu_int);
    axpy(gn, tables.item_interest.row(n), gu_int);
    auto gu_conf = out.grads.at(TableId::kUserConformity, u);
    axpy(gp, tables.item_conformity.row(p), gu_conf);
    axpy(gn, tables.item_conformity.row(n), gu_conf);
    axpy(gp, ui, out.grads.at(TableId::kItemInterest, p));
    axpy(gp, uc, out.grads.at(TableId::kItemConformity, p));
    axpy(gn, ui, out.grads.at(TableId::kItemInterest, n));
    axpy(gn, uc, out.grads.at(TableId::kItemConformity, n));
  }
  return out;
}

AdamState AdamState::like(const DisentangledEmbeddings& emb) {
  AdamState state;
  for (std::size_t k = 0; k < kNumTables; ++k) {
    const Matrix& t = emb.table(static_cast<TableId>(k));
    state.m[k] = Matrix(t.rows, t.cols);
    state.v[k] = Matrix(t.rows, t.cols);
  }
  return state;
}

void adam_step(DisentangledEmbeddings& emb, const SparseGrads& grads, AdamState& state,
               double lr) {
  if (!(lr > 0.0)) throw std::invalid_argument("adam_step: lr must be positive");
  ++state.t;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));

  for (std::size_t k = 0; k < kNumTables; ++k) {
    const auto tid = static_cast<TableId>(k);
    Matrix& table = emb.table(tid);
    Matrix& m = state.m[k];
    Matrix& v = state.v[k];
    if (m.rows != table.rows || m.cols != table.cols)
      throw std::invalid_argument("adam_step: state shape does not match tables");
    if (grads.dim() != 0 && grads.dim() != table.cols)
      throw std::invalid_argument("adam_step: gradient dimension mismatch");

    const auto& rows = grads.rows(tid);
    for (std::uint32_t pos = 0; pos < rows.size(); ++pos) {
      const std::uint32_t r = rows[pos];
      if (r >= table.rows) throw std::out_of_range("adam_step: gradient row out of range");
      const auto g = grads.grad(tid, pos);
      bool any = false;
      for (double x : g) {
        if (!std::isfinite(x))
          throw std::runtime_error("adam_step: non-finite gradient at table " +
                                   std::to_string(k) + " row " + std::to_string(r));
        any = any || x != 0.0;
      }
      if (!any) continue;  // only rows with signal touch moments and parameters

      auto mr = m.row(r);
      auto vr = v.row(r);
      auto pr = table.row(r);
      for (std::size_t d = 0; d < g.size(); ++d) {
        mr[d] = state.beta1 * mr[d] + (1.0 - state.beta1) * g[d];
        vr[d] = state.beta2 * vr[d] + (1.0 - state.beta2) * g[d] * g[d];
        pr[d] -= lr * (mr[d] / bc1) / (std::sqrt(vr[d] / bc2) + state.eps);
      }
    }
  }
}

namespace {

// Gradients w.r.t. propagated tables map to base-table gradients through the
// same layer-averaged operator (the adjacency is symmetric).
SparseGrads backprop_propagation(const SparseGrads& grads, const NormAdjacency& adj,
                                 std::uint32_t layers, std::size_t num_users,
                                 std::size_t num_items, std::uint32_t dim) {
  SparseGrads out(dim);
  const std::pair<TableId, TableId> causes[2] = {
      {TableId::kUserInterest, TableId::kItemInterest},
      {TableId::kUserConformity, TableId::kItemConformity},
  };
  for (const auto& [user_tid, item_tid] : causes) {
    const auto& urows = grads.rows(user_tid);
    const auto& irows = grads.rows(item_tid);
    if (urows.empty() && irows.empty()) continue;

    Matrix stacked(num_users + num_items, dim);
    for (std::uint32_t pos = 0; pos < urows.size(); ++pos) {
      const auto g = grads.grad(user_tid, pos);
      std::copy(g.begin(), g.end(), stacked.row(urows[pos]).begin());
    }
    for (std::uint32_t pos = 0; pos < irows.size(); ++pos) {
      const auto g = grads.grad(item_tid, pos);
      std::copy(g.begin(), g.end(), stacked.row(num_users + irows[pos]).begin());
    }
    propagate_stacked(stacked, adj, layers);
    for (std::size_t r = 0; r < num_users + num_items; ++r) {
      const auto row = stacked.row(r);
      if (std::all_of(row.begin(), row.end(), [](double x) { return x == 0.0; })) continue;
      if (r < num_users)
        out.add(user_tid, static_cast<std::uint32_t>(r), row);
      else
        out.add(item_tid, static_cast<std::uint32_t>(r - num_users), row);
    }
  }
  return out;
}

}  // namespace

StepLosses compute_step_loss(const DisentangledEmbeddings& emb, const NormAdjacency* adj,
                             const TrainConfig& cfg, const TrainingBatch& batch) {
  const DisentangledEmbeddings* tables = &emb;
  DisentangledEmbeddings propagated;
  if (cfg.backbone == Backbone::kLightGcn) {
    if (adj == nullptr)
      throw std::invalid_argument("compute_step_loss: lightgcn backbone needs an adjacency");
    propagated = lightgcn_propagate(emb, *adj, cfg.layers);
    tables = &propagated;
  }

  const LossOutput main = bpr_main_loss(*tables, batch);
  LossOutput li, lc;
  if (cfg.alpha > 0.0)
    li = interest_contrastive_loss(tables->user_interest, tables->item_interest,
                                   interest_rows(batch), cfg.loss_mode);
  if (cfg.beta > 0.0)
    lc = conformity_contrastive_loss(tables->user_conformity, tables->item_conformity,
                                     conformity_rows(batch), cfg.loss_mode);
  LossOutput tot = total_loss(main, li, lc, cfg.alpha, cfg.beta);

  StepLosses out;
  out.main = main.value;
  out.interest = li.value;
  out.conformity = lc.value;
  out.total = tot.value;
  out.rows_without_negatives = tot.rows_without_negatives;
  out.zero_weight_rows = tot.zero_weight_rows;
  if (cfg.backbone == Backbone::kLightGcn) {
    out.grads = backprop_propagation(tot.grads, *adj, cfg.layers, emb.num_users, emb.num_items,
                                     static_cast<std::uint32_t>(emb.dim));
  } else {
    out.grads = std::move(tot.grads);
  }
  return out;
}

void write_training_log(const std::string& path, const std::vector<EpochLog>& log) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << "epoch\tmain_loss\tint_loss\tconf_loss\ttotal\tval_HR@20\twall_seconds\n";
  char buf[256];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof(buf), "%u\t%.6f\t%.6f\t%.6f\t%.6f\t%.6f\t%.3f\n", e.epoch,
                  e.main_loss, e.int_loss, e.conf_loss, e.total, e.val_hr20, e.wall_seconds);
    out << buf;
  }
  if (!out) throw IoError("write failed: " + path);
}

TrainResult train(const TrainConfig& cfg, const SplitDataset& split, const PopularityStats& stats,
                  const std::string& out_dir) {
  cfg.validate();
  if (split.train.empty()) throw std::invalid_argument("train: empty train set");
  if (stats.i_pop.size() != split.train.num_items)
    throw std::invalid_argument("train: popularity stats do not match the item space");

  namespace fs = std::filesystem;
  if (!out_dir.empty()) fs::create_directories(out_dir);
  const std::string ckpt_path =
      out_dir.empty() ? "" : (fs::path(out_dir) / "checkpoint.bin").string();
  const std::string log_path =
      out_dir.empty() ? "" : (fs::path(out_dir) / "training_log.tsv").string();

  // Validation holdout for early stopping. The propagation graph (LightGCN)
  // stays the full train set: edges shape the forward pass but validation
  // pairs never contribute gradients.
  InteractionDataset fit = split.train;
  InteractionDataset val;
  bool has_val = false;
  if (cfg.val_fraction > 0.0) {
    SplitDataset vs = dccl::split(split.train, cfg.val_fraction, rng::derive(cfg.seed, "val"));
    if (!vs.test.empty() && !vs.train.empty()) {
      fit = std::move(vs.train);
      val = std::move(vs.test);
      has_val = true;
    }
  }

  DisentangledEmbeddings emb = init_embeddings(split.train.num_users, split.train.num_items,
                                               cfg.dim, cfg.seed, cfg.init_scale);
  AdamState adam = AdamState::like(emb);
  NormAdjacency adj;
  const bool use_adj = cfg.backbone == Backbone::kLightGcn;
  if (use_adj) adj = build_norm_adjacency(split.train);
  const CheckpointMeta meta{cfg.backbone, cfg.layers};

  BatchSampler sampler(fit, stats);
  rng::Stream batch_stream(rng::derive(cfg.seed, "batches"));
  const bool build_contrastive = cfg.alpha > 0.0 || cfg.beta > 0.0;
  const std::size_t steps =
      std::max<std::size_t>(1, (fit.num_pairs() + cfg.batch_size - 1) / cfg.batch_size);

  TrainResult result;
  DisentangledEmbeddings best;
  double best_hr = -1.0;
  std::uint32_t since_best = 0;

  for (std::uint32_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    EpochLog el;
    el.epoch = epoch;
    for (std::size_t s = 0; s < steps; ++s) {
      const TrainingBatch batch =
          sampler.sample_batch(cfg.batch_size, batch_stream, build_contrastive,
                               cfg.false_negative_filter);
      const StepLosses sl = compute_step_loss(emb, use_adj ? &adj : nullptr, cfg, batch);
      adam_step(emb, sl.grads, adam, cfg.learning_rate);
      el.main_loss += sl.main;
      el.int_loss += sl.interest;
      el.conf_loss += sl.conformity;
      el.total += sl.total;
    }
    const double inv_steps = 1.0 / static_cast<double>(steps);
    el.main_loss *= inv_steps;
    el.int_loss *= inv_steps;
    el.conf_loss *= inv_steps;
    el.total *= inv_steps;

    if (has_val) {
      const DisentangledEmbeddings* ev = &emb;
      DisentangledEmbeddings prop;
      if (use_adj) {
        prop = lightgcn_propagate(emb, adj, cfg.layers);
        ev = &prop;
      }
      el.val_hr20 = evaluate(*ev, val, fit, stats, 20).hr;
    }
    el.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.log.push_back(el);
    result.epochs_run = epoch;

    if (!out_dir.empty()) {
      save_checkpoint(ckpt_path, emb, meta);
      write_training_log(log_path, result.log);
    }

    if (has_val) {
      if (el.val_hr20 > best_hr) {
        best_hr = el.val_hr20;
        best = emb;
        since_best = 0;
      } else if (++since_best >= cfg.patience) {
        result.early_stopped = true;
        break;
      }
    }
  }

  if (has_val) {
    result.emb = std::move(best);
    result.best_val_hr20 = best_hr;
    if (!out_dir.empty()) save_checkpoint(ckpt_path, result.emb, meta);
  } else {
    result.emb = std::move(emb);
  }
  return result;
}

}  // namespace dccl
