#include "flowgrad/sparse.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>

#include "flowgrad/errors.hpp"
#include "flowgrad/kernels.hpp"

namespace flowgrad::sparse {

std::size_t SparsityPattern::find(std::size_t row, std::size_t col) const {
  if (row >= n_rows) return npos;
  auto first = col_indices.begin() + static_cast<std::ptrdiff_t>(row_offsets[row]);
  auto last = col_indices.begin() + static_cast<std::ptrdiff_t>(row_offsets[row + 1]);
  auto it = std::lower_bound(first, last, col);
  if (it == last || *it != col) return npos;
  return static_cast<std::size_t>(it - col_indices.begin());
}

void SparsityPattern::validate() const {
  if (row_offsets.size() != n_rows + 1 || row_offsets.front() != 0 ||
      row_offsets.back() != col_indices.size())
    throw ContractError("CSR row offsets inconsistent with column indices");
  for (std::size_t i = 0; i < n_rows; ++i) {
    if (row_offsets[i] > row_offsets[i + 1]) throw ContractError("CSR row offsets decrease");
    for (std::size_t k = row_offsets[i]; k < row_offsets[i + 1]; ++k) {
      if (col_indices[k] >= n_cols) throw ContractError("CSR column index out of range");
      if (k > row_offsets[i] && col_indices[k] <= col_indices[k - 1])
        throw ContractError("CSR columns not strictly increasing within a row");
    }
  }
}

SparseMatrix::SparseMatrix(PatternPtr pattern, std::vector<double> values)
    : pattern_(std::move(pattern)), values_(std::move(values)) {
  if (!pattern_) throw ContractError("null sparsity pattern");
  if (values_.size() != pattern_->nnz()) throw ContractError("value count != pattern nnz");
}

SparseMatrix SparseMatrix::from_triplets(std::size_t n_rows, std::size_t n_cols,
                                         std::span<const Triplet> triplets) {
  std::vector<Triplet> sorted(triplets.begin(), triplets.end());
  for (const auto& t : sorted)
    if (t.row >= n_rows || t.col >= n_cols) throw ContractError("triplet index out of range");
  std::stable_sort(sorted.begin(), sorted.end(), [](const Triplet& a, const Triplet& b) {
    return a.row != b.row ? a.row < b.row : a.col < b.col;
  });
  auto pattern = std::make_shared<SparsityPattern>();
  pattern->n_rows = n_rows;
  pattern->n_cols = n_cols;
  pattern->row_offsets.assign(n_rows + 1, 0);
  std::vector<double> values;
  for (std::size_t k = 0; k < sorted.size(); ++k) {
    const auto& t = sorted[k];
    if (k > 0 && sorted[k - 1].row == t.row && sorted[k - 1].col == t.col) {
      values.back() += t.value;
      continue;
    }
    pattern->col_indices.push_back(t.col);
    values.push_back(t.value);
    ++pattern->row_offsets[t.row + 1];
  }
  for (std::size_t i = 0; i < n_rows; ++i) pattern->row_offsets[i + 1] += pattern->row_offsets[i];
  return SparseMatrix(std::move(pattern), std::move(values));
}

SparseMatrix SparseMatrix::identity(std::size_t n) {
  std::vector<Triplet> t;
  for (std::size_t i = 0; i < n; ++i) t.push_back({i, i, 1.0});
  return from_triplets(n, n, t);
}

double SparseMatrix::at(std::size_t row, std::size_t col) const {
  const std::size_t k = pattern_->find(row, col);
  return k == SparsityPattern::npos ? 0.0 : values_[k];
}

std::vector<double> SparseMatrix::to_dense() const {
  std::vector<double> d(n_rows() * n_cols(), 0.0);
  const auto& p = *pattern_;
  for (std::size_t i = 0; i < p.n_rows; ++i)
    for (std::size_t k = p.row_offsets[i]; k < p.row_offsets[i + 1]; ++k)
      d[i * p.n_cols + p.col_indices[k]] = values_[k];
  return d;
}

std::vector<double> spmv(const SparseMatrix& a, std::span<const double> x) {
  if (x.size() != a.n_cols()) throw ContractError("spmv: dimension mismatch");
  std::vector<double> y(a.n_rows());
  kernels::spmv(a.pattern(), a.values(), x, y);
  return y;
}

std::vector<double> spmv_transpose(const SparseMatrix& a, std::span<const double> x) {
  if (x.size() != a.n_rows()) throw ContractError("spmv_transpose: dimension mismatch");
  std::vector<double> y(a.n_cols());
  kernels::serial::spmv_transpose(a.pattern(), a.values(), x, y);
  return y;
}

LUFactors LUFactors::factorize(const SparseMatrix& a) {
  if (a.n_rows() != a.n_cols()) throw ContractError("lu_factorize: matrix is not square");
  const auto& p = a.pattern();
  LUFactors f;
  f.n_ = a.n_rows();
  double anorm = 0.0;
  for (std::size_t i = 0; i < p.n_rows; ++i) {
    for (std::size_t k = p.row_offsets[i]; k < p.row_offsets[i + 1]; ++k) {
      const std::size_t j = p.col_indices[k];
      if (j < i) f.kl_ = std::max(f.kl_, i - j);
      if (j > i) f.ku_ = std::max(f.ku_, j - i);
      anorm = std::max(anorm, std::abs(a.values()[k]));
    }
  }
  const std::size_t n = f.n_, kl = f.kl_, ku = f.ku_;
  f.width_ = 2 * kl + ku + 1;
  f.band_.assign(n * f.width_, 0.0);
  f.pivots_.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = p.row_offsets[i]; k < p.row_offsets[i + 1]; ++k)
      f.w(i, p.col_indices[k]) = a.values()[k];

  const double tiny = 1e-14 * anorm;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t last_row = std::min(n - 1, k + kl);
    const std::size_t last_col = std::min(n - 1, k + kl + ku);
    std::size_t piv = k;
    double best = std::abs(f.w(k, k));
    for (std::size_t i = k + 1; i <= last_row; ++i) {
      if (std::abs(f.w(i, k)) > best) {
        best = std::abs(f.w(i, k));
        piv = i;
      }
    }
    if (!(best > tiny)) throw SingularMatrixError(k);
    f.pivots_[k] = piv;
    if (piv != k)
      for (std::size_t j = k; j <= last_col; ++j) std::swap(f.w(k, j), f.w(piv, j));
    const double inv = 1.0 / f.w(k, k);
    for (std::size_t i = k + 1; i <= last_row; ++i) {
      const double l = f.w(i, k) * inv;
      f.w(i, k) = l;
      if (l == 0.0) continue;
      for (std::size_t j = k + 1; j <= last_col; ++j) f.w(i, j) -= l * f.w(k, j);
    }
  }
  return f;
}

std::vector<double> LUFactors::solve(std::span<const double> b) const {
  if (b.size() != n_) throw ContractError("LU solve: dimension mismatch");
  std::vector<double> x(b.begin(), b.end());
  for (std::size_t k = 0; k < n_; ++k) {
    if (pivots_[k] != k) std::swap(x[k], x[pivots_[k]]);
    const std::size_t last_row = std::min(n_ - 1, k + kl_);
    for (std::size_t i = k + 1; i <= last_row; ++i) x[i] -= w(i, k) * x[k];
  }
  for (std::size_t k = n_; k-- > 0;) {
    const std::size_t last_col = std::min(n_ - 1, k + kl_ + ku_);
    double s = x[k];
    for (std::size_t j = k + 1; j <= last_col; ++j) s -= w(k, j) * x[j];
    x[k] = s / w(k, k);
  }
  return x;
}

std::vector<double> LUFactors::solve_transpose(std::span<const double> b) const {
  if (b.size() != n_) throw ContractError("LU solve: dimension mismatch");
  std::vector<double> z(b.begin(), b.end());
  // U^T z = b, forward substitution over columns of U.
  for (std::size_t k = 0; k < n_; ++k) {
    z[k] /= w(k, k);
    const std::size_t last_col = std::min(n_ - 1, k + kl_ + ku_);
    for (std::size_t j = k + 1; j <= last_col; ++j) z[j] -= w(k, j) * z[k];
  }
  // Undo the elementary eliminations in reverse order.
  for (std::size_t k = n_; k-- > 0;) {
    const std::size_t last_row = std::min(n_ - 1, k + kl_);
    double s = z[k];
    for (std::size_t i = k + 1; i <= last_row; ++i) s -= w(i, k) * z[i];
    z[k] = s;
    if (pivots_[k] != k) std::swap(z[k], z[pivots_[k]]);
  }
  return z;
}

void write_matrix_market(std::ostream& os, const SparseMatrix& a) {
  const auto& p = a.pattern();
  os << "%%MatrixMarket matrix coordinate real general\n";
  os << p.n_rows << ' ' << p.n_cols << ' ' << p.nnz() << '\n';
  os << std::setprecision(17);
  for (std::size_t i = 0; i < p.n_rows; ++i)
    for (std::size_t k = p.row_offsets[i]; k < p.row_offsets[i + 1]; ++k)
      os << i + 1 << ' ' << p.col_indices[k] + 1 << ' ' << a.values()[k] << '\n';
}

}  // namespace flowgrad::sparse
