#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "dccl/common.hpp"
#include "dccl/model.hpp"

namespace dccl {

/// How the popularity factor of the contrastive losses is applied.
/// kWeighted multiplies each row's log-softmax term by the popularity
/// weight, so the weight shapes the gradients. kLiteral keeps the factor
/// inside the log, where it is an additive constant: same printed loss
/// surface, gradient-inert.
enum class LossMode { kWeighted, kLiteral };

/// Sparse per-row gradients keyed by (table, row), accumulated in
/// first-touch order.
class SparseGrads {
 public:
  SparseGrads() = default;
  explicit SparseGrads(std::uint32_t dim) : dim_(dim) {}

  std::uint32_t dim() const { return dim_; }

  /// grad[table][row] += coeff * g
  void add(TableId table, std::uint32_t row, std::span<const double> g, double coeff = 1.0);
  /// this += coeff * other
  void merge_scaled(const SparseGrads& other, double coeff);
  void scale(double coeff);

  std::span<double> at(TableId table, std::uint32_t row);  // inserts zeros if absent
  const std::vector<std::uint32_t>& rows(TableId table) const { return tables_[idx(table)].rows; }
  std::span<const double> grad(TableId table, std::uint32_t position) const {
    const auto& t = tables_[idx(table)];
    return {t.data.data() + static_cast<std::size_t>(position) * dim_, dim_};
  }
  bool contains(TableId table, std::uint32_t row) const {
    return tables_[idx(table)].index.count(row) > 0;
  }
  std::size_t num_entries() const;

 private:
  static std::size_t idx(TableId t) { return static_cast<std::size_t>(t); }
  struct TableGrads {
    std::unordered_map<std::uint32_t, std::uint32_t> index;  // row -> position
    std::vector<std::uint32_t> rows;                         // first-touch order
    std::vector<double> data;                                // rows.size() * dim
  };
  std::uint32_t dim_ = 0;
  std::array<TableGrads, kNumTables> tables_;
};

struct LossOutput {
  double value = 0.0;
  SparseGrads grads;
  std::size_t rows_without_negatives = 0;
  std::size_t zero_weight_rows = 0;  // literal-mode conformity rows with i_pop = 0
};

/// One contrastive operand bundle: ids index the user/item tables handed to
/// the loss. For conformity rows the negatives must already be
/// popularity-filtered.
struct ContrastiveRow {
  UserId user = 0;
  ItemId pos_item = 0;
  std::vector<ItemId> neg_items;
  double i_pop = 0.0;
};

struct BprTerm {
  double value = 0.0;
  double d_pos = 0.0;  // d value / d s_pos
  double d_neg = 0.0;
};

/// -ln sigmoid(s_pos - s_neg), stabilized via log1p.
BprTerm bpr_loss(double s_pos, double s_neg);

/// Unweighted InfoNCE term for one row:
///   t = -log( exp(S(u,pos)) / (exp(S(u,pos)) + sum_j exp(S(u,neg_j))) )
/// computed with max-subtraction. Gradient buffers are overwritten:
/// d_user and d_pos must be dim-sized; d_negs is resized to
/// neg_items.size() * dim. Zero negatives yields t = 0 and zero gradients.
double infonce_row(const Matrix& item_table, std::span<const double> user_vec,
                   std::span<const double> pos_vec, std::span<const ItemId> neg_items,
                   std::span<double> d_user, std::span<double> d_pos, std::vector<double>& d_negs);

/// Mean over rows of w * t (weighted, w = exp(-i_pop)) or i_pop + t
/// (literal). Gradients are keyed on the interest tables.
LossOutput interest_contrastive_loss(const Matrix& user_table, const Matrix& item_table,
                                     std::span<const ContrastiveRow> rows, LossMode mode);

/// As interest, with w = 1 - exp(-i_pop); literal rows with i_pop = 0 are
/// skipped (their weight has no logarithm) and counted. Gradients are keyed
/// on the conformity tables.
LossOutput conformity_contrastive_loss(const Matrix& user_table, const Matrix& item_table,
                                       std::span<const ContrastiveRow> rows, LossMode mode);

/// Keeps candidates whose popularity does not exceed the positive's, in
/// order.
std::vector<std::uint32_t> filter_conformity_negatives(
    double pos_pop, std::span<const std::pair<std::uint32_t, double>> candidates);

/// main + alpha * interest + beta * conformity, with sparse gradient merge.
/// Zero coefficients skip the merge so unused rows never enter the key set.
LossOutput total_loss(const LossOutput& main, const LossOutput& interest,
                      const LossOutput& conformity, double alpha, double beta);

}  // namespace dccl
