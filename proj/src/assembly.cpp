#include "flowgrad/assembly.hpp"

#include <algorithm>
#include <set>

#include "flowgrad/errors.hpp"

namespace flowgrad::fem {

kernels::ElementTerm make_term(const StructuredGrid& grid, std::size_t field, Interp interp,
                               Form form, double scale) {
  const auto& rule = QuadraturePointSet::gauss2x2();
  const double sx = 2.0 / grid.hx(), sy = 2.0 / grid.hy();
  const double det = 0.25 * grid.hx() * grid.hy();
  kernels::ElementTerm term;
  term.field = field;
  for (const auto& q : rule.points) {
    std::array<double, 4> dx, dy;
    for (std::size_t a = 0; a < 4; ++a) {
      dx[a] = q.dshape_dxi[a] * sx;
      dy[a] = q.dshape_deta[a] * sy;
    }
    const auto& n = q.shape;
    for (std::size_t c = 0; c < 4; ++c) {
      const double f = interp == Interp::value ? n[c] : interp == Interp::dx ? dx[c] : dy[c];
      const double wf = scale * q.weight * det * f;
      for (std::size_t a = 0; a < 4; ++a) {
        for (std::size_t b = 0; b < 4; ++b) {
          double form_ab = 0.0;
          switch (form) {
            case Form::grad_grad: form_ab = dx[b] * dx[a] + dy[b] * dy[a]; break;
            case Form::mass: form_ab = n[b] * n[a]; break;
            case Form::trial_dx: form_ab = dx[b] * n[a]; break;
            case Form::trial_dy: form_ab = dy[b] * n[a]; break;
            case Form::test_dx: form_ab = n[b] * dx[a]; break;
            case Form::test_dy: form_ab = n[b] * dy[a]; break;
          }
          term.weights[c * 16 + a * 4 + b] += wf * form_ab;
        }
      }
    }
  }
  return term;
}

namespace {

kernels::ElementLayout layout_of(const StructuredGrid& g) {
  return {g.num_elements(), g.element_node_table(), g.element_slot_table()};
}

struct AssemblyContext {
  const StructuredGrid* grid;
  std::vector<kernels::ElementTerm> terms;
};

ad::OpId assemble_op() {
  static const ad::OpId id = ad::OpRegistry::global().add(ad::CustomOpDef{
      "fem_assemble",
      [](ad::InputValues in, std::any& ctx) {
        const auto& c = *std::any_cast<std::shared_ptr<const AssemblyContext>>(ctx);
        std::vector<std::span<const double>> fields;
        for (const Tensor* f : in) {
          if (f->size() != c.grid->num_nodes())
            throw ContractError("fem_assemble: field size != node count");
          fields.emplace_back(f->values);
        }
        std::vector<double> values(c.grid->node_pattern()->nnz());
        kernels::assemble(layout_of(*c.grid), c.terms, fields, values);
        return Tensor(std::move(values));
      },
      [](const Tensor& g, ad::InputValues in, const Tensor&, const std::any& ctx) {
        const auto& c = *std::any_cast<std::shared_ptr<const AssemblyContext>>(ctx);
        std::vector<Tensor> out;
        std::vector<std::span<double>> grads;
        out.reserve(in.size());
        for (const Tensor* f : in) out.push_back(Tensor::zeros(f->shape));
        for (auto& o : out) grads.emplace_back(o.values);
        kernels::assemble_adjoint(layout_of(*c.grid), c.terms, g.values, grads);
        return out;
      }});
  return id;
}

}  // namespace

sparse::SparseMatrix assemble_constant(const StructuredGrid& grid, Form form, double scale) {
  const std::vector<double> one(grid.num_nodes(), 1.0);
  const std::vector<std::span<const double>> fields{one};
  const std::vector<kernels::ElementTerm> terms{make_term(grid, 0, Interp::value, form, scale)};
  std::vector<double> values(grid.node_pattern()->nnz());
  kernels::assemble(layout_of(grid), terms, fields, values);
  return sparse::SparseMatrix(grid.node_pattern(), std::move(values));
}

ad::NodeId assemble_block(ad::Tape& t, const StructuredGrid& grid, std::vector<ad::NodeId> fields,
                          std::vector<kernels::ElementTerm> terms) {
  for (const auto& term : terms)
    if (term.field >= fields.size()) throw ContractError("assemble_block: bad field index");
  auto ctx = std::make_shared<const AssemblyContext>(AssemblyContext{&grid, std::move(terms)});
  return t.apply(assemble_op(), std::move(fields), ctx);
}

sparse::SparseBlock assemble_diffusion_block(ad::Tape& t, const StructuredGrid& grid,
                                             ad::NodeId coeff) {
  return {grid.node_pattern(),
          assemble_block(t, grid, {coeff}, {make_term(grid, 0, Interp::value, Form::grad_grad)})};
}

ConvectionBlocks assemble_convection_blocks(ad::Tape& t, const StructuredGrid& grid, ad::NodeId u,
                                            ad::NodeId v) {
  const auto& p = grid.node_pattern();
  ConvectionBlocks b;
  b.advection = {p, assemble_block(t, grid, {u, v},
                                   {make_term(grid, 0, Interp::value, Form::trial_dx),
                                    make_term(grid, 1, Interp::value, Form::trial_dy)})};
  b.reaction_ux = {p, assemble_block(t, grid, {u}, {make_term(grid, 0, Interp::dx, Form::mass)})};
  b.reaction_uy = {p, assemble_block(t, grid, {u}, {make_term(grid, 0, Interp::dy, Form::mass)})};
  b.reaction_vx = {p, assemble_block(t, grid, {v}, {make_term(grid, 0, Interp::dx, Form::mass)})};
  b.reaction_vy = {p, assemble_block(t, grid, {v}, {make_term(grid, 0, Interp::dy, Form::mass)})};
  return b;
}

GradDivBlocks assemble_grad_div_blocks(const StructuredGrid& grid) {
  return {assemble_constant(grid, Form::test_dx), assemble_constant(grid, Form::test_dy),
          assemble_constant(grid, Form::trial_dx), assemble_constant(grid, Form::trial_dy)};
}

sparse::SparseBlock assemble_advection_diffusion(ad::Tape& t, const StructuredGrid& grid,
                                                 ad::NodeId u, ad::NodeId v, ad::NodeId k,
                                                 double rho_cp) {
  return {grid.node_pattern(),
          assemble_block(t, grid, {u, v, k},
                         {make_term(grid, 0, Interp::value, Form::trial_dx, rho_cp),
                          make_term(grid, 1, Interp::value, Form::trial_dy, rho_cp),
                          make_term(grid, 2, Interp::value, Form::grad_grad)})};
}

void DirichletSpec::validate(const StructuredGrid& grid) const {
  std::set<std::pair<std::size_t, int>> seen;
  for (const auto& e : entries) {
    if (e.node >= grid.num_nodes()) throw ContractError("Dirichlet node out of range");
    if (!seen.insert({e.node, static_cast<int>(e.component)}).second)
      throw ContractError("Dirichlet node/component listed twice: node " +
                          std::to_string(e.node));
  }
}

std::pair<std::vector<std::size_t>, std::vector<double>> DirichletSpec::dofs(
    std::span<const Component> layout) const {
  std::vector<std::size_t> d;
  std::vector<double> v;
  for (const auto& e : entries) {
    const auto it = std::find(layout.begin(), layout.end(), e.component);
    if (it == layout.end()) throw ContractError("Dirichlet component not in system layout");
    d.push_back(e.node * layout.size() + static_cast<std::size_t>(it - layout.begin()));
    v.push_back(e.value);
  }
  return {std::move(d), std::move(v)};
}

void apply_dirichlet(sparse::SparseMatrix& a, std::vector<double>& rhs, const DirichletSpec& spec,
                     std::span<const Component> layout) {
  const auto [d, v] = spec.dofs(layout);
  sparse::apply_dirichlet(a, rhs, d, v);
}

}  // namespace flowgrad::fem
