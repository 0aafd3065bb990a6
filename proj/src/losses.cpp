#include "dccl/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace dccl {

void SparseGrads::add(TableId table, std::uint32_t row, std::span<const double> g, double coeff) {
  if (g.size() != dim_) throw std::invalid_argument("SparseGrads::add: dimension mismatch");
  axpy(coeff, g, at(table, row));
}

std::span<double> SparseGrads::at(TableId table, std::uint32_t row) {
  auto& t = tables_[idx(table)];
  auto [it, inserted] = t.index.try_emplace(row, static_cast<std::uint32_t>(t.rows.size()));
  if (inserted) {
    t.rows.push_back(row);
    t.data.resize(t.data.size() + dim_, 0.0);
  }
  return {t.data.data() + static_cast<std::size_t>(it->second) * dim_, dim_};
}

void SparseGrads::merge_scaled(const SparseGrads& other, double coeff) {
  if (dim_ == 0) dim_ = other.dim_;
  if (other.dim_ != 0 && other.dim_ != dim_)
    throw std::invalid_argument("SparseGrads::merge_scaled: dimension mismatch");
  for (std::size_t k = 0; k < kNumTables; ++k) {
    const auto& src = other.tables_[k];
    for (std::size_t p = 0; p < src.rows.size(); ++p) {
      std::span<const double> g(src.data.data() + p * dim_, dim_);
      add(static_cast<TableId>(k), src.rows[p], g, coeff);
    }
  }
}

void SparseGrads::scale(double coeff) {
  for (auto& t : tables_)
    for (double& v : t.data) v *= coeff;
}

std::size_t SparseGrads::num_entries() const {
  std::size_t n = 0;
  for (const auto& t : tables_) n += t.rows.size();
  return n;
}

BprTerm bpr_loss(double s_pos, double s_neg) {
  const double x = s_pos - s_neg;
  BprTerm out;
  // -ln sigmoid(x) = softplus(-x)
  double sig;
  if (x >= 0.0) {
    out.value = std::log1p(std::exp(-x));
    sig = 1.0 / (1.0 + std::exp(-x));
  } else {
    out.value = -x + std::log1p(std::exp(x));
    const double e = std::exp(x);
    sig = e / (1.0 + e);
  }
  out.d_pos = sig - 1.0;
  out.d_neg = 1.0 - sig;
  return out;
}

double infonce_row(const Matrix& item_table, std::span<const double> user_vec,
                   std::span<const double> pos_vec, std::span<const ItemId> neg_items,
                   std::span<double> d_user, std::span<double> d_pos, std::vector<double>& d_negs) {
  const std::size_t d = user_vec.size();
  if (pos_vec.size() != d || d_user.size() != d || d_pos.size() != d || item_table.cols != d)
    throw std::invalid_argument("infonce_row: dimension mismatch");
  std::fill(d_user.begin(), d_user.end(), 0.0);
  std::fill(d_pos.begin(), d_pos.end(), 0.0);
  d_negs.assign(neg_items.size() * d, 0.0);
  if (neg_items.empty()) return 0.0;

  const double s_pos = dot(user_vec, pos_vec);
  std::vector<double> s_neg(neg_items.size());
  double s_max = s_pos;
  for (std::size_t j = 0; j < neg_items.size(); ++j) {
    if (neg_items[j] >= item_table.rows) throw std::out_of_range("infonce_row: negative id");
    s_neg[j] = dot(user_vec, item_table.row(neg_items[j]));
    s_max = std::max(s_max, s_neg[j]);
  }
  const double e_pos = std::exp(s_pos - s_max);
  double z = e_pos;
  for (double s : s_neg) z += std::exp(s - s_max);
  const double t = -(s_pos - s_max) + std::log(z);

  const double p_pos = e_pos / z;
  // d_user = (p_pos - 1) * pos + sum_j p_j * neg_j ; d_pos = (p_pos - 1) * user
  axpy(p_pos - 1.0, pos_vec, d_user);
  axpy(p_pos - 1.0, user_vec, d_pos);
  for (std::size_t j = 0; j < neg_items.size(); ++j) {
    const double p_j = std::exp(s_neg[j] - s_max) / z;
    axpy(p_j, item_table.row(neg_items[j]), d_user);
    std::span<double> d_neg(d_negs.data() + j * d, d);
    axpy(p_j, user_vec, d_neg);
  }
  return t;
}

namespace {

enum class Cause { kInterest, kConformity };

LossOutput cause_contrastive_loss(const Matrix& user_table, const Matrix& item_table,
                                  std::span<const ContrastiveRow> rows, LossMode mode,
                                  Cause cause) {
  const std::uint32_t d = static_cast<std::uint32_t>(user_table.cols);
  if (item_table.cols != d)
    throw std::invalid_argument("contrastive loss: table dimension mismatch");
  const TableId user_tid = cause == Cause::kInterest ? TableId::kUserInterest
                                                     : TableId::kUserConformity;
  const TableId item_tid = cause == Cause::kInterest ? TableId::kItemInterest
                                                     : TableId::kItemConformity;
  LossOutput out;
  out.grads = SparseGrads(d);
  if (rows.empty()) return out;
  const double inv_n = 1.0 / static_cast<double>(rows.size());

  std::vector<double> d_user(d), d_pos(d), d_negs;
  for (const ContrastiveRow& row : rows) {
    if (row.i_pop < 0.0 || row.i_pop > 1.0)
      throw std::invalid_argument("contrastive loss: i_pop outside [0, 1]");
    if (row.neg_items.empty()) {
      ++out.rows_without_negatives;
      continue;
    }
    if (row.user >= user_table.rows || row.pos_item >= item_table.rows)
      throw std::out_of_range("contrastive loss: row id out of range");

    double coeff;  // factor applied to t and to its gradients
    double constant = 0.0;
    if (mode == LossMode::kWeighted) {
      coeff = cause == Cause::kInterest ? std::exp(-row.i_pop) : 1.0 - std::exp(-row.i_pop);
    } else {
      coeff = 1.0;
      if (cause == Cause::kInterest) {
        constant = row.i_pop;  // -log(exp(-i_pop))
      } else {
        const double w = 1.0 - std::exp(-row.i_pop);
        if (w <= 0.0) {
          ++out.zero_weight_rows;
          continue;
        }
        constant = -std::log(w);
      }
    }

    const double t = infonce_row(item_table, user_table.row(row.user),
                                 item_table.row(row.pos_item), row.neg_items, d_user, d_pos,
                                 d_negs);
    out.value += (constant + coeff * t) * inv_n;
    const double scale = coeff * inv_n;
    out.grads.add(user_tid, row.user, d_user, scale);
    out.grads.add(item_tid, row.pos_item, d_pos, scale);
    for (std::size_t j = 0; j < row.neg_items.size(); ++j) {
      std::span<const double> g(d_negs.data() + j * d, d);
      out.grads.add(item_tid, row.neg_items[j], g, scale);
    }
  }
  return out;
}

}  // namespace

LossOutput interest_contrastive_loss(const Matrix& user_table, const Matrix& item_table,
                                     std::span<const ContrastiveRow> rows, LossMode mode) {
  return cause_contrastive_loss(user_table, item_table, rows, mode, Cause::kInterest);
}

LossOutput conformity_contrastive_loss(const Matrix& user_table, const Matrix& item_table,
                                       std::span<const ContrastiveRow> rows, LossMode mode) {
  return cause_contrastive_loss(user_table, item_table, rows, mode, Cause::kConformity);
}

std::vector<std::uint32_t> filter_conformity_negatives(
    double pos_pop, std::span<const std::pair<std::uint32_t, double>> candidates) {
  std::vector<std::uint32_t> kept;
  for (const auto& [id, pop] : candidates)
    if (pop <= pos_pop) kept.push_back(id);
  return kept;
}

LossOutput total_loss(const LossOutput& main, const LossOutput& interest,
                      const LossOutput& conformity, double alpha, double beta) {
  if (alpha < 0.0 || beta < 0.0)
    throw std::invalid_argument("total_loss: coefficients must be non-negative");
  LossOutput out;
  out.value = main.value + alpha * interest.value + beta * conformity.value;
  out.grads = main.grads;
  if (alpha > 0.0) out.grads.merge_scaled(interest.grads, alpha);
  if (beta > 0.0) out.grads.merge_scaled(conformity.grads, beta);
  out.rows_without_negatives = interest.rows_without_negatives + conformity.rows_without_negatives;
  out.zero_weight_rows = interest.zero_weight_rows + conformity.zero_weight_rows;
  return out;
}

}  // namespace dccl
