#include "flowgrad/sparse_ops.hpp"

#include <algorithm>

#include "flowgrad/errors.hpp"
#include "flowgrad/kernels.hpp"

namespace flowgrad::sparse {

using ad::CustomOpDef;
using ad::InputValues;
using ad::OpId;
using ad::OpRegistry;

namespace {

void require(bool ok, const char* msg) {
  if (!ok) throw ContractError(msg);
}

OpId spmv_op() {
  static const OpId id = OpRegistry::global().add(CustomOpDef{
      "spmv",
      [](InputValues in, std::any& ctx) {
        const auto& p = *std::any_cast<PatternPtr>(ctx);
        require(in[0]->size() == p.nnz(), "spmv: value count != pattern nnz");
        require(in[1]->size() == p.n_cols, "spmv: dimension mismatch");
        std::vector<double> y(p.n_rows);
        kernels::spmv(p, in[0]->values, in[1]->values, y);
        return Tensor(std::move(y));
      },
      [](const Tensor& g, InputValues in, const Tensor&, const std::any& ctx) {
        const auto& p = *std::any_cast<PatternPtr>(ctx);
        const auto& x = in[1]->values;
        std::vector<double> ga(p.nnz());
        for (std::size_t i = 0; i < p.n_rows; ++i)
          for (std::size_t k = p.row_offsets[i]; k < p.row_offsets[i + 1]; ++k)
            ga[k] = g.values[i] * x[p.col_indices[k]];
        std::vector<double> gx(p.n_cols);
        kernels::serial::spmv_transpose(p, in[0]->values, g.values, gx);
        return std::vector<Tensor>{Tensor(in[0]->shape, std::move(ga)),
                                   Tensor(in[1]->shape, std::move(gx))};
      }});
  return id;
}

OpId solve_op() {
  static const OpId id = OpRegistry::global().add(CustomOpDef{
      "sparse_solve",
      [](InputValues in, std::any& ctx) {
        const auto& pattern = std::any_cast<PatternPtr>(ctx);
        require(in[0]->size() == pattern->nnz(), "solve: value count != pattern nnz");
        require(in[1]->size() == pattern->n_rows, "solve: dimension mismatch");
        const SparseMatrix a(pattern, in[0]->values);
        return Tensor(LUFactors::factorize(a).solve(in[1]->values));
      },
      [](const Tensor& g, InputValues in, const Tensor& x, const std::any& ctx) {
        const auto& pattern = std::any_cast<PatternPtr>(ctx);
        const SparseMatrix a(pattern, in[0]->values);
        std::vector<double> lambda = LUFactors::factorize(a).solve_transpose(g.values);
        const auto& p = *pattern;
        std::vector<double> ga(p.nnz());
        for (std::size_t i = 0; i < p.n_rows; ++i)
          for (std::size_t k = p.row_offsets[i]; k < p.row_offsets[i + 1]; ++k)
            ga[k] = -lambda[i] * x.values[p.col_indices[k]];
        return std::vector<Tensor>{Tensor(in[0]->shape, std::move(ga)),
                                   Tensor(in[1]->shape, std::move(lambda))};
      }});
  return id;
}

struct DirichletMatrixContext {
  PatternPtr pattern;
  std::vector<char> constrained;  // per dof
};

OpId dirichlet_matrix_op() {
  static const OpId id = OpRegistry::global().add(CustomOpDef{
      "dirichlet_matrix",
      [](InputValues in, std::any& ctx) {
        const auto& c = *std::any_cast<std::shared_ptr<const DirichletMatrixContext>>(ctx);
        const auto& p = *c.pattern;
        std::vector<double> v(in[0]->values);
        for (std::size_t i = 0; i < p.n_rows; ++i) {
          for (std::size_t k = p.row_offsets[i]; k < p.row_offsets[i + 1]; ++k) {
            const std::size_t j = p.col_indices[k];
            if (c.constrained[i] || c.constrained[j]) v[k] = (i == j) ? 1.0 : 0.0;
          }
        }
        return Tensor(in[0]->shape, std::move(v));
      },
      [](const Tensor& g, InputValues in, const Tensor&, const std::any& ctx) {
        const auto& c = *std::any_cast<std::shared_ptr<const DirichletMatrixContext>>(ctx);
        const auto& p = *c.pattern;
        std::vector<double> gv(g.values);
        for (std::size_t i = 0; i < p.n_rows; ++i)
          for (std::size_t k = p.row_offsets[i]; k < p.row_offsets[i + 1]; ++k)
            if (c.constrained[i] || c.constrained[p.col_indices[k]]) gv[k] = 0.0;
        return std::vector<Tensor>{Tensor(in[0]->shape, std::move(gv))};
      }});
  return id;
}

struct DirichletRhsContext {
  PatternPtr pattern;
  std::vector<char> constrained;
  std::vector<double> prescribed;  // per dof, 0 where free
};

OpId dirichlet_rhs_op() {
  static const OpId id = OpRegistry::global().add(CustomOpDef{
      "dirichlet_rhs",
      [](InputValues in, std::any& ctx) {
        const auto& c = *std::any_cast<std::shared_ptr<const DirichletRhsContext>>(ctx);
        const auto& p = *c.pattern;
        const auto& a = in[0]->values;
        std::vector<double> r(in[1]->values);
        for (std::size_t i = 0; i < p.n_rows; ++i) {
          if (c.constrained[i]) {
            r[i] = c.prescribed[i];
            continue;
          }
          for (std::size_t k = p.row_offsets[i]; k < p.row_offsets[i + 1]; ++k) {
            const std::size_t j = p.col_indices[k];
            if (c.constrained[j]) r[i] -= a[k] * c.prescribed[j];
          }
        }
        return Tensor(in[1]->shape, std::move(r));
      },
      [](const Tensor& g, InputValues in, const Tensor&, const std::any& ctx) {
        const auto& c = *std::any_cast<std::shared_ptr<const DirichletRhsContext>>(ctx);
        const auto& p = *c.pattern;
        std::vector<double> ga(p.nnz(), 0.0);
        std::vector<double> gr(g.values);
        for (std::size_t i = 0; i < p.n_rows; ++i) {
          if (c.constrained[i]) {
            gr[i] = 0.0;
            continue;
          }
          for (std::size_t k = p.row_offsets[i]; k < p.row_offsets[i + 1]; ++k) {
            const std::size_t j = p.col_indices[k];
            if (c.constrained[j]) ga[k] = -g.values[i] * c.prescribed[j];
          }
        }
        return std::vector<Tensor>{Tensor(in[0]->shape, std::move(ga)),
                                   Tensor(in[1]->shape, std::move(gr))};
      }});
  return id;
}

struct ComposeContext {
  std::shared_ptr<const BlockLayout> layout;
  std::vector<BlockSlot> slots;
  std::shared_ptr<const std::vector<double>> base;
};

OpId compose_op() {
  static const OpId id = OpRegistry::global().add(CustomOpDef{
      "compose_blocks",
      [](InputValues in, std::any& ctx) {
        const auto& c = *std::any_cast<std::shared_ptr<const ComposeContext>>(ctx);
        const auto& np = *c.layout->node_pattern();
        const auto& sp = *c.layout->system_pattern();
        std::vector<double> v = c.base ? *c.base : std::vector<double>(sp.nnz(), 0.0);
        for (const auto& slot : c.slots) {
          const auto& b = in[slot.input]->values;
          require(b.size() == np.nnz(), "compose_blocks: block size != node pattern nnz");
          for (std::size_t i = 0; i < np.n_rows; ++i)
            for (std::size_t k = np.row_offsets[i]; k < np.row_offsets[i + 1]; ++k)
              v[c.layout->position(i, k, slot.row_comp, slot.col_comp)] += slot.scale * b[k];
        }
        return Tensor(std::move(v));
      },
      [](const Tensor& g, InputValues in, const Tensor&, const std::any& ctx) {
        const auto& c = *std::any_cast<std::shared_ptr<const ComposeContext>>(ctx);
        const auto& np = *c.layout->node_pattern();
        std::vector<Tensor> out(in.size());
        for (const auto& slot : c.slots) {
          Tensor& gb = out[slot.input];
          if (gb.values.empty()) gb = Tensor::zeros(in[slot.input]->shape);
          for (std::size_t i = 0; i < np.n_rows; ++i)
            for (std::size_t k = np.row_offsets[i]; k < np.row_offsets[i + 1]; ++k)
              gb.values[k] +=
                  slot.scale * g.values[c.layout->position(i, k, slot.row_comp, slot.col_comp)];
        }
        return out;
      }});
  return id;
}

std::vector<char> mark(std::size_t n, std::span<const std::size_t> dofs) {
  std::vector<char> m(n, 0);
  for (std::size_t d : dofs) {
    if (d >= n) throw ContractError("Dirichlet dof out of range");
    if (m[d]) throw ContractError("Dirichlet dof constrained twice: " + std::to_string(d));
    m[d] = 1;
  }
  return m;
}

}  // namespace

ad::NodeId spmv(ad::Tape& t, const SparseBlock& a, ad::NodeId x) {
  return t.apply(spmv_op(), {a.values, x}, a.pattern);
}

ad::NodeId solve_differentiable(ad::Tape& t, const SparseBlock& a, ad::NodeId b) {
  return t.apply(solve_op(), {a.values, b}, a.pattern);
}

SparseBlock dirichlet_matrix(ad::Tape& t, const SparseBlock& a, std::vector<std::size_t> dofs) {
  auto ctx = std::make_shared<DirichletMatrixContext>();
  ctx->pattern = a.pattern;
  ctx->constrained = mark(a.pattern->n_rows, dofs);
  for (std::size_t d : dofs)
    if (a.pattern->find(d, d) == SparsityPattern::npos)
      throw ContractError("dirichlet_matrix: diagonal not in pattern");
  return SparseBlock{a.pattern, t.apply(dirichlet_matrix_op(), {a.values},
                                        std::shared_ptr<const DirichletMatrixContext>(ctx))};
}

ad::NodeId dirichlet_rhs(ad::Tape& t, const SparseBlock& a, ad::NodeId rhs,
                         std::vector<std::size_t> dofs, std::vector<double> prescribed) {
  if (dofs.size() != prescribed.size()) throw ContractError("dirichlet_rhs: length mismatch");
  auto ctx = std::make_shared<DirichletRhsContext>();
  ctx->pattern = a.pattern;
  ctx->constrained = mark(a.pattern->n_rows, dofs);
  ctx->prescribed.assign(a.pattern->n_rows, 0.0);
  for (std::size_t k = 0; k < dofs.size(); ++k) ctx->prescribed[dofs[k]] = prescribed[k];
  return t.apply(dirichlet_rhs_op(), {a.values, rhs},
                 std::shared_ptr<const DirichletRhsContext>(ctx));
}

BlockLayout::BlockLayout(PatternPtr node_pattern, std::size_t ncomp)
    : node_(std::move(node_pattern)), ncomp_(ncomp) {
  const auto& np = *node_;
  auto sp = std::make_shared<SparsityPattern>();
  sp->n_rows = np.n_rows * ncomp;
  sp->n_cols = np.n_cols * ncomp;
  sp->row_offsets.reserve(sp->n_rows + 1);
  sp->row_offsets.push_back(0);
  for (std::size_t i = 0; i < np.n_rows; ++i) {
    for (std::size_t ci = 0; ci < ncomp; ++ci) {
      for (std::size_t k = np.row_offsets[i]; k < np.row_offsets[i + 1]; ++k)
        for (std::size_t cj = 0; cj < ncomp; ++cj)
          sp->col_indices.push_back(np.col_indices[k] * ncomp + cj);
      sp->row_offsets.push_back(sp->col_indices.size());
    }
  }
  system_ = std::move(sp);
}

std::size_t BlockLayout::position(std::size_t node_row, std::size_t k, std::size_t ci,
                                  std::size_t cj) const {
  const std::size_t row = node_row * ncomp_ + ci;
  return system_->row_offsets[row] + (k - node_->row_offsets[node_row]) * ncomp_ + cj;
}

ad::NodeId compose_blocks(ad::Tape& t, std::shared_ptr<const BlockLayout> layout,
                          std::vector<ad::NodeId> blocks, std::vector<BlockSlot> slots,
                          std::shared_ptr<const std::vector<double>> base) {
  for (const auto& s : slots)
    if (s.input >= blocks.size() || s.row_comp >= layout->ncomp() ||
        s.col_comp >= layout->ncomp())
      throw ContractError("compose_blocks: bad slot");
  if (base && base->size() != layout->system_pattern()->nnz())
    throw ContractError("compose_blocks: base has wrong size");
  auto ctx = std::make_shared<const ComposeContext>(
      ComposeContext{std::move(layout), std::move(slots), std::move(base)});
  return t.apply(compose_op(), std::move(blocks), ctx);
}

void apply_dirichlet(SparseMatrix& a, std::vector<double>& rhs,
                     std::span<const std::size_t> dofs, std::span<const double> prescribed) {
  if (dofs.size() != prescribed.size() || rhs.size() != a.n_rows())
    throw ContractError("apply_dirichlet: length mismatch");
  const auto& p = a.pattern();
  const auto constrained = mark(p.n_rows, dofs);
  std::vector<double> g(p.n_rows, 0.0);
  for (std::size_t k = 0; k < dofs.size(); ++k) g[dofs[k]] = prescribed[k];
  auto v = a.values();
  for (std::size_t i = 0; i < p.n_rows; ++i) {
    if (constrained[i]) {
      if (p.find(i, i) == SparsityPattern::npos)
        throw ContractError("apply_dirichlet: diagonal not in pattern");
      rhs[i] = g[i];
    }
    for (std::size_t k = p.row_offsets[i]; k < p.row_offsets[i + 1]; ++k) {
      const std::size_t j = p.col_indices[k];
      if (constrained[i]) {
        v[k] = (i == j) ? 1.0 : 0.0;
      } else if (constrained[j]) {
        rhs[i] -= v[k] * g[j];
        v[k] = 0.0;
      }
    }
  }
}

}  // namespace flowgrad::sparse
