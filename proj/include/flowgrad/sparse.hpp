#pragma once

#include <cstddef>
#include <iosfwd>
#include <memory>
#include <span>
#include <vector>

namespace flowgrad::sparse {

/// CSR index structure. Column indices are strictly increasing within a row.
struct SparsityPattern {
  std::size_t n_rows = 0;
  std::size_t n_cols = 0;
  std::vector<std::size_t> row_offsets;  // n_rows + 1
  std::vector<std::size_t> col_indices;

  std::size_t nnz() const noexcept { return col_indices.size(); }
  /// Position of (row, col) in the value array, or npos if not stored.
  std::size_t find(std::size_t row, std::size_t col) const;
  /// Throws ContractError when the CSR invariants do not hold.
  void validate() const;

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);
};

using PatternPtr = std::shared_ptr<const SparsityPattern>;

struct Triplet {
  std::size_t row;
  std::size_t col;
  double value;
};

class SparseMatrix {
public:
  SparseMatrix() = default;
  SparseMatrix(PatternPtr pattern, std::vector<double> values);
  /// Duplicate (row, col) pairs are summed.
  static SparseMatrix from_triplets(std::size_t n_rows, std::size_t n_cols,
                                    std::span<const Triplet> triplets);
  static SparseMatrix identity(std::size_t n);

  std::size_t n_rows() const noexcept { return pattern_->n_rows; }
  std::size_t n_cols() const noexcept { return pattern_->n_cols; }
  std::size_t nnz() const noexcept { return values_.size(); }
  const SparsityPattern& pattern() const noexcept { return *pattern_; }
  const PatternPtr& pattern_ptr() const noexcept { return pattern_; }
  std::span<const double> values() const noexcept { return values_; }
  std::span<double> values() noexcept { return values_; }
  /// Stored entry or 0.
  double at(std::size_t row, std::size_t col) const;

  /// Dense row-major copy. For tests and debugging only.
  std::vector<double> to_dense() const;

private:
  PatternPtr pattern_;
  std::vector<double> values_;
};

/// y = A x
std::vector<double> spmv(const SparseMatrix& a, std::span<const double> x);
/// y = A^T x
std::vector<double> spmv_transpose(const SparseMatrix& a, std::span<const double> x);

/// Band LU with partial (row) pivoting. The band widths come from the sparsity
/// pattern, so a node-major dof ordering on a structured grid keeps the fill small.
class LUFactors {
public:
  /// Throws SingularMatrixError naming the failing pivot.
  static LUFactors factorize(const SparseMatrix& a);

  std::vector<double> solve(std::span<const double> b) const;
  std::vector<double> solve_transpose(std::span<const double> b) const;

  std::size_t size() const noexcept { return n_; }
  std::size_t lower_bandwidth() const noexcept { return kl_; }
  std::size_t upper_bandwidth() const noexcept { return ku_; }

private:
  // Row i stores columns [i - kl, i + kl + ku].
  double& w(std::size_t i, std::size_t j) { return band_[i * width_ + (j + kl_ - i)]; }
  double w(std::size_t i, std::size_t j) const { return band_[i * width_ + (j + kl_ - i)]; }

  std::size_t n_ = 0, kl_ = 0, ku_ = 0, width_ = 0;
  std::vector<double> band_;
  std::vector<std::size_t> pivots_;
};

/// MatrixMarket coordinate/real/general, 1-based indices.
void write_matrix_market(std::ostream& os, const SparseMatrix& a);

}  // namespace flowgrad::sparse
