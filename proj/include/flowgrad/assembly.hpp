#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "flowgrad/grid.hpp"
#include "flowgrad/kernels.hpp"
#include "flowgrad/sparse_ops.hpp"

namespace flowgrad::fem {

/// How a nodal field enters the integrand at a quadrature point.
enum class Interp { value, dx, dy };

/// Bilinear form between trial function phi_j (column) and test function phi_i (row).
enum class Form {
  grad_grad,  // grad phi_j . grad phi_i
  mass,       // phi_j phi_i
  trial_dx,   // d(phi_j)/dx phi_i
  trial_dy,
  test_dx,    // phi_j d(phi_i)/dx
  test_dy,
};

/// Element weights for sum_q w_q |J| scale * F(field)_q * form(a, b)_q.
kernels::ElementTerm make_term(const StructuredGrid& grid, std::size_t field, Interp interp,
                               Form form, double scale = 1.0);

/// Matrix of `form` with unit coefficient on the node pattern.
sparse::SparseMatrix assemble_constant(const StructuredGrid& grid, Form form, double scale = 1.0);

/// Differentiable assembly: values on the node pattern, linear in each field.
/// The grid must outlive the tape.
ad::NodeId assemble_block(ad::Tape& t, const StructuredGrid& grid, std::vector<ad::NodeId> fields,
                          std::vector<kernels::ElementTerm> terms);

/// K_ij = sum_q w nu(x_q) grad phi_j . grad phi_i with nu interpolated bilinearly.
sparse::SparseBlock assemble_diffusion_block(ad::Tape& t, const StructuredGrid& grid,
                                             ad::NodeId coeff);

/// Blocks of the linearized convection term around the iterate (u_k, v_k).
struct ConvectionBlocks {
  sparse::SparseBlock advection;     // (u_k dphi_j/dx + v_k dphi_j/dy) phi_i
  sparse::SparseBlock reaction_ux;   // phi_j (du_k/dx) phi_i
  sparse::SparseBlock reaction_uy;   // phi_j (du_k/dy) phi_i
  sparse::SparseBlock reaction_vx;
  sparse::SparseBlock reaction_vy;
};
ConvectionBlocks assemble_convection_blocks(ad::Tape& t, const StructuredGrid& grid, ad::NodeId u,
                                            ad::NodeId v);

struct GradDivBlocks {
  sparse::SparseMatrix gx, gy;  // phi_j dphi_i/dx, pressure gradient tested against velocity
  sparse::SparseMatrix dx, dy;  // dphi_j/dx phi_i, divergence tested against pressure
};
GradDivBlocks assemble_grad_div_blocks(const StructuredGrid& grid);

/// rho_cp * (u . grad) + div(k grad) operator of the steady heat equation.
sparse::SparseBlock assemble_advection_diffusion(ad::Tape& t, const StructuredGrid& grid,
                                                 ad::NodeId u, ad::NodeId v, ad::NodeId k,
                                                 double rho_cp);

enum class Component { u = 0, v = 1, p = 2, T = 3 };

struct DirichletEntry {
  std::size_t node;
  Component component;
  double value;
};

struct DirichletSpec {
  std::vector<DirichletEntry> entries;

  /// Throws ContractError for unknown nodes or duplicate (node, component) pairs.
  void validate(const StructuredGrid& grid) const;
  /// Dof indices and values for an interleaved layout where component c sits
  /// at node * ncomp + offset(c). Components not in the layout are rejected.
  std::pair<std::vector<std::size_t>, std::vector<double>> dofs(
      std::span<const Component> layout) const;
};

/// Row replacement plus column elimination on an assembled system.
void apply_dirichlet(sparse::SparseMatrix& a, std::vector<double>& rhs, const DirichletSpec& spec,
                     std::span<const Component> layout);

}  // namespace flowgrad::fem
