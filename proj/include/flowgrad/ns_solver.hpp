#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "flowgrad/assembly.hpp"
#include "flowgrad/grid.hpp"
#include "flowgrad/sparse_ops.hpp"
#include "flowgrad/tape.hpp"

namespace flowgrad::solver {

struct PhysicsConstants {
  double rho = 1.0;
  double cp = 1.0;
  double body_force_f = 0.0;  // constant x body force
  double body_force_g = 0.0;  // constant y body force
  double heat_source = 1.0;   // constant Q
  double kappa1 = 1.0;
  double kappa2 = 1.0;
  double q1 = 0.0;
  double q2 = 0.0;
  /// Pressure stabilization coefficient: beta * h^2 (grad p, grad q).
  double stabilization_beta = 0.01;

  void validate() const;
};

struct NewtonConfig {
  double tol = 1e-8;  // infinity norm of the residual
  int max_iter = 10;
  /// When > 0, run exactly this many Newton updates regardless of the residual.
  /// Keeps the computation path fixed for finite-difference checks.
  int fixed_iterations = 0;
  std::function<void(int iteration, double residual)> trace;
  /// Receives the Dirichlet-constrained Jacobian of every Newton update.
  std::function<void(int iteration, const sparse::SparseMatrix& jacobian)> jacobian_hook;

  void validate() const;
};

/// Converged Navier-Stokes state on the tape. `x` interleaves (u, v, p) per node.
struct NSState {
  ad::NodeId x, u, v, p;
  int iterations = 0;
  double final_residual = 0.0;
  std::vector<double> residual_history;
};

/// Lid-driven cavity data: u = lid on the y = 0 edge (corners included), u = 0
/// on the other edges, v = 0 on all edges, p = 0 at node (0,0).
fem::DirichletSpec cavity_boundary(const fem::StructuredGrid& grid, double lid_velocity);
/// T = value on all boundary nodes.
fem::DirichletSpec temperature_boundary(const fem::StructuredGrid& grid, double value);

/// Everything about the discrete steady Navier-Stokes system that does not
/// depend on the state or the viscosity. The grid must outlive this object
/// and any tape it is used with.
class NavierStokesProblem {
public:
  NavierStokesProblem(const fem::StructuredGrid& grid, PhysicsConstants constants,
                      fem::DirichletSpec bc);

  const fem::StructuredGrid& grid() const noexcept { return *grid_; }
  const PhysicsConstants& constants() const noexcept { return constants_; }
  const std::shared_ptr<const sparse::BlockLayout>& layout() const noexcept { return layout_; }
  const std::shared_ptr<const std::vector<double>>& constant_part() const noexcept {
    return base_;
  }
  const std::vector<double>& forcing() const noexcept { return forcing_; }
  const std::vector<std::size_t>& dirichlet_dofs() const noexcept { return dofs_; }
  /// Boundary values at their dofs, zero elsewhere.
  const std::vector<double>& initial_guess() const noexcept { return initial_; }
  std::size_t num_dofs() const noexcept { return 3 * grid_->num_nodes(); }

private:
  const fem::StructuredGrid* grid_;
  PhysicsConstants constants_;
  std::shared_ptr<const sparse::BlockLayout> layout_;
  std::shared_ptr<const std::vector<double>> base_;
  std::vector<double> forcing_;
  std::vector<std::size_t> dofs_;
  std::vector<double> initial_;
};

/// Stacked residual of the momentum and stabilized continuity equations at
/// `state`, with Dirichlet rows zeroed.
ad::NodeId ns_residual(ad::Tape& t, const NavierStokesProblem& problem, ad::NodeId state,
                       ad::NodeId nu);

/// Newton iteration from the lifted initial guess. Every iteration is recorded
/// on the tape so gradients flow through the whole solve.
NSState newton_solve(ad::Tape& t, const NavierStokesProblem& problem, ad::NodeId nu,
                     const NewtonConfig& config);

class HeatProblem {
public:
  HeatProblem(const fem::StructuredGrid& grid, PhysicsConstants constants, fem::DirichletSpec bc);

  const fem::StructuredGrid& grid() const noexcept { return *grid_; }
  const PhysicsConstants& constants() const noexcept { return constants_; }
  const std::vector<double>& load() const noexcept { return load_; }
  const std::vector<std::size_t>& dirichlet_dofs() const noexcept { return dofs_; }
  const std::vector<double>& dirichlet_values() const noexcept { return values_; }

private:
  const fem::StructuredGrid* grid_;
  PhysicsConstants constants_;
  std::vector<double> load_;  // M * Q
  std::vector<std::size_t> dofs_;
  std::vector<double> values_;
};

/// Steady advection-diffusion with the velocity of `u`, `v` (one-way coupling).
ad::NodeId heat_solve(ad::Tape& t, const HeatProblem& problem, ad::NodeId u, ad::NodeId v,
                      ad::NodeId k);
inline ad::NodeId heat_solve(ad::Tape& t, const HeatProblem& problem, const NSState& ns,
                             ad::NodeId k) {
  return heat_solve(t, problem, ns.u, ns.v, k);
}

struct ParticleState {
  std::vector<ad::NodeId> w1;  // one node per time level, w1[0] is the initial state
  std::vector<ad::NodeId> w2;
  double dt = 0.0;
  int steps = 0;
};

/// Implicit Euler for dw/dt = kappa (u - w) + q on every node.
/// `kappa1`, `kappa2` are scalar tape nodes so gradients reach them.
ParticleState transport_integrate(ad::Tape& t, ad::NodeId u, ad::NodeId v, ad::NodeId kappa1,
                                  ad::NodeId kappa2, double q1, double q2, ad::NodeId w1_init,
                                  ad::NodeId w2_init, double dt, int n_steps);

}  // namespace flowgrad::solver
