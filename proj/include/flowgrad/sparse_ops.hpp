#pragma once

#include <cstddef>
#include <memory>
#include <vector>

#include "flowgrad/sparse.hpp"
#include "flowgrad/tape.hpp"

// Sparse linear algebra as tape operators. Matrices on the tape are value
// vectors aligned with a fixed sparsity pattern; gradients exist only for
// stored entries.
namespace flowgrad::sparse {

struct SparseBlock {
  PatternPtr pattern;
  ad::NodeId values;
};

/// y = A x, differentiable in both A's values and x.
ad::NodeId spmv(ad::Tape& t, const SparseBlock& a, ad::NodeId x);

/// x = A^{-1} b. Backward: grad_b = A^{-T} g and grad_A(i,j) = -(A^{-T} g)_i x_j.
/// The factorization is recomputed in the backward pass.
ad::NodeId solve_differentiable(ad::Tape& t, const SparseBlock& a, ad::NodeId b);

/// Replace the rows and columns of the constrained dofs by identity rows/columns.
SparseBlock dirichlet_matrix(ad::Tape& t, const SparseBlock& a, std::vector<std::size_t> dofs);

/// rhs'_i = g_i on constrained dofs, rhs_i - sum_j A_ij g_j elsewhere (j constrained).
/// Pairs with dirichlet_matrix to keep the eliminated system symmetric.
ad::NodeId dirichlet_rhs(ad::Tape& t, const SparseBlock& a, ad::NodeId rhs,
                         std::vector<std::size_t> dofs, std::vector<double> prescribed);

/// A system pattern with `ncomp` interleaved components per node built from a
/// node-to-node pattern: dof = node * ncomp + component. Every node pair in
/// the node pattern couples all component pairs.
class BlockLayout {
public:
  BlockLayout(PatternPtr node_pattern, std::size_t ncomp);

  const PatternPtr& node_pattern() const noexcept { return node_; }
  const PatternPtr& system_pattern() const noexcept { return system_; }
  std::size_t ncomp() const noexcept { return ncomp_; }
  /// Position in the system value array of node-pattern entry k, components (ci, cj).
  std::size_t position(std::size_t node_row, std::size_t k, std::size_t ci,
                       std::size_t cj) const;

private:
  PatternPtr node_;
  PatternPtr system_;
  std::size_t ncomp_;
};

struct BlockSlot {
  std::size_t input;  // index into the `blocks` argument
  std::size_t row_comp;
  std::size_t col_comp;
  double scale;
};

/// system = base + sum over slots of scale * block[input] placed at (row_comp, col_comp).
/// `base` may be null (zero).
ad::NodeId compose_blocks(ad::Tape& t, std::shared_ptr<const BlockLayout> layout,
                          std::vector<ad::NodeId> blocks, std::vector<BlockSlot> slots,
                          std::shared_ptr<const std::vector<double>> base = nullptr);

/// Non-tape Dirichlet elimination (row replacement + column elimination).
void apply_dirichlet(SparseMatrix& a, std::vector<double>& rhs,
                     std::span<const std::size_t> dofs, std::span<const double> prescribed);

}  // namespace flowgrad::sparse
