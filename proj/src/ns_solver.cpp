#include "flowgrad/ns_solver.hpp"

#include <algorithm>
#include <cmath>

#include "flowgrad/errors.hpp"
#include "flowgrad/ops.hpp"

namespace flowgrad::solver {

namespace {

constexpr fem::Component kFlowLayout[] = {fem::Component::u, fem::Component::v,
                                          fem::Component::p};
constexpr fem::Component kHeatLayout[] = {fem::Component::T};

double inf_norm(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

}  // namespace

void PhysicsConstants::validate() const {
  if (!(rho > 0) || !(cp > 0)) throw ContractError("rho and cp must be positive");
  if (!(kappa1 > 0) || !(kappa2 > 0)) throw ContractError("kappa must be positive");
  if (!(stabilization_beta >= 0)) throw ContractError("stabilization beta must be >= 0");
}

void NewtonConfig::validate() const {
  if (!(tol > 0)) throw ContractError("Newton tolerance must be positive");
  if (max_iter < 1) throw ContractError("Newton max_iter must be >= 1");
  if (fixed_iterations < 0) throw ContractError("fixed_iterations must be >= 0");
}

fem::DirichletSpec cavity_boundary(const fem::StructuredGrid& grid, double lid_velocity) {
  fem::DirichletSpec spec;
  for (std::size_t n : grid.boundary()) {
    const bool lid = grid.coord(n).y == 0.0;
    spec.entries.push_back({n, fem::Component::u, lid ? lid_velocity : 0.0});
    spec.entries.push_back({n, fem::Component::v, 0.0});
  }
  spec.entries.push_back({grid.node(0, 0), fem::Component::p, 0.0});
  return spec;
}

fem::DirichletSpec temperature_boundary(const fem::StructuredGrid& grid, double value) {
  fem::DirichletSpec spec;
  for (std::size_t n : grid.boundary()) spec.entries.push_back({n, fem::Component::T, value});
  return spec;
}

NavierStokesProblem::NavierStokesProblem(const fem::StructuredGrid& grid,
                                         PhysicsConstants constants, fem::DirichletSpec bc)
    : grid_(&grid), constants_(constants) {
  constants_.validate();
  bc.validate(grid);
  auto layout = std::make_shared<sparse::BlockLayout>(grid.node_pattern(), 3);
  const auto& np = *grid.node_pattern();

  const auto blocks = fem::assemble_grad_div_blocks(grid);
  const double h2 = grid.hx() * grid.hy();
  const auto stab = fem::assemble_constant(grid, fem::Form::grad_grad,
                                           constants_.stabilization_beta * h2);
  const auto mass = fem::assemble_constant(grid, fem::Form::mass);

  std::vector<double> base(layout->system_pattern()->nnz(), 0.0);
  const double inv_rho = 1.0 / constants_.rho;
  for (std::size_t i = 0; i < np.n_rows; ++i) {
    for (std::size_t k = np.row_offsets[i]; k < np.row_offsets[i + 1]; ++k) {
      base[layout->position(i, k, 0, 2)] = -inv_rho * blocks.gx.values()[k];
      base[layout->position(i, k, 1, 2)] = -inv_rho * blocks.gy.values()[k];
      base[layout->position(i, k, 2, 0)] = blocks.dx.values()[k];
      base[layout->position(i, k, 2, 1)] = blocks.dy.values()[k];
      base[layout->position(i, k, 2, 2)] = stab.values()[k];
    }
  }
  base_ = std::make_shared<const std::vector<double>>(std::move(base));
  layout_ = std::move(layout);

  const std::size_t n = grid.num_nodes();
  forcing_.assign(3 * n, 0.0);
  const auto mf = sparse::spmv(mass, std::vector<double>(n, constants_.body_force_f));
  const auto mg = sparse::spmv(mass, std::vector<double>(n, constants_.body_force_g));
  for (std::size_t i = 0; i < n; ++i) {
    forcing_[3 * i] = mf[i];
    forcing_[3 * i + 1] = mg[i];
  }

  auto [dofs, values] = bc.dofs(kFlowLayout);
  initial_.assign(3 * n, 0.0);
  for (std::size_t k = 0; k < dofs.size(); ++k) initial_[dofs[k]] = values[k];
  dofs_ = std::move(dofs);
}

namespace {

struct Fields {
  ad::NodeId u, v, p;
};

Fields split(ad::Tape& t, ad::NodeId x, std::size_t n) {
  return {ops::strided(t, x, 0, 3, n), ops::strided(t, x, 1, 3, n), ops::strided(t, x, 2, 3, n)};
}

// Picard part of the operator: convection by the current iterate plus diffusion.
sparse::SparseBlock picard_matrix(ad::Tape& t, const NavierStokesProblem& problem,
                                  ad::NodeId advection, ad::NodeId diffusion) {
  return {problem.layout()->system_pattern(),
          sparse::compose_blocks(t, problem.layout(), {advection, diffusion},
                                 {{0, 0, 0, 1.0}, {0, 1, 1, 1.0}, {1, 0, 0, 1.0}, {1, 1, 1, 1.0}},
                                 problem.constant_part())};
}

ad::NodeId residual_from(ad::Tape& t, const NavierStokesProblem& problem,
                         const sparse::SparseBlock& picard, ad::NodeId x, ad::NodeId forcing) {
  ad::NodeId r = ops::sub(t, sparse::spmv(t, picard, x), forcing);
  return ops::zero_entries(t, r, problem.dirichlet_dofs());
}

}  // namespace

ad::NodeId ns_residual(ad::Tape& t, const NavierStokesProblem& problem, ad::NodeId state,
                       ad::NodeId nu) {
  const std::size_t n = problem.grid().num_nodes();
  if (t.value(state).size() != 3 * n) throw ContractError("ns_residual: state size mismatch");
  if (t.value(nu).size() != n) throw ContractError("ns_residual: viscosity size mismatch");
  const Fields f = split(t, state, n);
  const auto conv = fem::assemble_convection_blocks(t, problem.grid(), f.u, f.v);
  const auto diff = fem::assemble_diffusion_block(t, problem.grid(), nu);
  const auto s = picard_matrix(t, problem, conv.advection.values, diff.values);
  const ad::NodeId forcing = t.constant(Tensor(problem.forcing()));
  const ad::NodeId r = residual_from(t, problem, s, state, forcing);
  if (!all_finite(t.value(r).values)) throw NumericError("ns_residual", "non-finite residual");
  return r;
}

NSState newton_solve(ad::Tape& t, const NavierStokesProblem& problem, ad::NodeId nu,
                     const NewtonConfig& config) {
  config.validate();
  const auto& grid = problem.grid();
  const std::size_t n = grid.num_nodes();
  if (t.value(nu).size() != n) throw ContractError("newton_solve: viscosity size mismatch");
  for (double x : t.value(nu).values)
    if (!(x > 0)) throw ContractError("newton_solve: viscosity must be strictly positive");

  const ad::NodeId forcing = t.constant(Tensor(problem.forcing()));
  const ad::NodeId diffusion = fem::assemble_diffusion_block(t, grid, nu).values;
  ad::NodeId x = t.constant(Tensor(problem.initial_guess()));

  NSState state;
  for (int k = 0;; ++k) {
    const Fields f = split(t, x, n);
    const auto conv = fem::assemble_convection_blocks(t, grid, f.u, f.v);
    const auto s = picard_matrix(t, problem, conv.advection.values, diffusion);
    const ad::NodeId r = residual_from(t, problem, s, x, forcing);
    const double norm = inf_norm(t.value(r).values);
    if (!std::isfinite(norm)) throw NumericError("newton_solve", "non-finite residual");
    state.residual_history.push_back(norm);
    if (config.trace) config.trace(k, norm);

    const bool done = config.fixed_iterations > 0 ? k == config.fixed_iterations
                                                   : (k > 0 && norm < config.tol);
    if (done) {
      state.x = x;
      state.u = f.u;
      state.v = f.v;
      state.p = f.p;
      state.iterations = k;
      state.final_residual = norm;
      return state;
    }
    if (config.fixed_iterations == 0 && k == config.max_iter) throw NonConvergenceError(k, norm);

    const sparse::SparseBlock jac{
        problem.layout()->system_pattern(),
        sparse::compose_blocks(t, problem.layout(),
                               {conv.advection.values, diffusion, conv.reaction_ux.values,
                                conv.reaction_uy.values, conv.reaction_vx.values,
                                conv.reaction_vy.values},
                               {{0, 0, 0, 1.0},
                                {0, 1, 1, 1.0},
                                {1, 0, 0, 1.0},
                                {1, 1, 1, 1.0},
                                {2, 0, 0, 1.0},
                                {3, 0, 1, 1.0},
                                {4, 1, 0, 1.0},
                                {5, 1, 1, 1.0}},
                               problem.constant_part())};
    const auto constrained = sparse::dirichlet_matrix(t, jac, problem.dirichlet_dofs());
    if (config.jacobian_hook)
      config.jacobian_hook(k, sparse::SparseMatrix(constrained.pattern,
                                                   t.value(constrained.values).values));
    const ad::NodeId step = sparse::solve_differentiable(t, constrained, r);
    x = ops::sub(t, x, step);
  }
}

HeatProblem::HeatProblem(const fem::StructuredGrid& grid, PhysicsConstants constants,
                         fem::DirichletSpec bc)
    : grid_(&grid), constants_(constants) {
  constants_.validate();
  bc.validate(grid);
  const auto mass = fem::assemble_constant(grid, fem::Form::mass);
  load_ = sparse::spmv(mass, std::vector<double>(grid.num_nodes(), constants_.heat_source));
  std::tie(dofs_, values_) = bc.dofs(kHeatLayout);
}

ad::NodeId heat_solve(ad::Tape& t, const HeatProblem& problem, ad::NodeId u, ad::NodeId v,
                      ad::NodeId k) {
  const auto& c = problem.constants();
  const auto a = fem::assemble_advection_diffusion(t, problem.grid(), u, v, k, c.rho * c.cp);
  const ad::NodeId load = t.constant(Tensor(problem.load()));
  const ad::NodeId rhs =
      sparse::dirichlet_rhs(t, a, load, problem.dirichlet_dofs(), problem.dirichlet_values());
  const auto constrained = sparse::dirichlet_matrix(t, a, problem.dirichlet_dofs());
  return sparse::solve_differentiable(t, constrained, rhs);
}

namespace {

struct RelaxContext {
  double dt, q;
};

// w' = (w + dt (kappa u + q)) / (1 + dt kappa)
ad::OpId relax_op() {
  static const ad::OpId id = ad::OpRegistry::global().add(ad::CustomOpDef{
      "relax_step",
      [](ad::InputValues in, std::any& ctx) {
        const auto c = std::any_cast<RelaxContext>(ctx);
        const auto& w = in[0]->values;
        const auto& u = in[1]->values;
        if (w.size() != u.size()) throw ContractError("relax_step: size mismatch");
        const double kappa = in[2]->item();
        const double denom = 1.0 + c.dt * kappa;
        std::vector<double> out(w.size());
        for (std::size_t i = 0; i < w.size(); ++i)
          out[i] = (w[i] + c.dt * (kappa * u[i] + c.q)) / denom;
        return Tensor(in[0]->shape, std::move(out));
      },
      [](const Tensor& g, ad::InputValues in, const Tensor& out, const std::any& ctx) {
        const auto c = std::any_cast<RelaxContext>(ctx);
        const auto& u = in[1]->values;
        const double kappa = in[2]->item();
        const double denom = 1.0 + c.dt * kappa;
        std::vector<double> gw(g.size()), gu(g.size());
        double gk = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) {
          gw[i] = g.values[i] / denom;
          gu[i] = g.values[i] * c.dt * kappa / denom;
          gk += g.values[i] * c.dt * (u[i] - out.values[i]) / denom;
        }
        return std::vector<Tensor>{Tensor(in[0]->shape, std::move(gw)),
                                   Tensor(in[1]->shape, std::move(gu)), Tensor::scalar(gk)};
      }});
  return id;
}

}  // namespace

ParticleState transport_integrate(ad::Tape& t, ad::NodeId u, ad::NodeId v, ad::NodeId kappa1,
                                  ad::NodeId kappa2, double q1, double q2, ad::NodeId w1_init,
                                  ad::NodeId w2_init, double dt, int n_steps) {
  if (!(dt > 0)) throw ContractError("transport: dt must be positive");
  if (n_steps < 1) throw ContractError("transport: need at least one step");
  if (!t.value(kappa1).is_scalar() || !t.value(kappa2).is_scalar())
    throw ContractError("transport: kappa must be scalar");
  ParticleState s;
  s.dt = dt;
  s.steps = n_steps;
  s.w1.push_back(w1_init);
  s.w2.push_back(w2_init);
  for (int m = 0; m < n_steps; ++m) {
    s.w1.push_back(t.apply(relax_op(), {s.w1.back(), u, kappa1}, RelaxContext{dt, q1}));
    s.w2.push_back(t.apply(relax_op(), {s.w2.back(), v, kappa2}, RelaxContext{dt, q2}));
  }
  return s;
}

}  // namespace flowgrad::solver
