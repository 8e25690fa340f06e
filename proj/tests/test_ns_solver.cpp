#include <doctest.h>

#include <cmath>

#include "flowgrad/errors.hpp"
#include "flowgrad/inverse.hpp"
#include "flowgrad/ns_solver.hpp"
#include "test_util.hpp"

using namespace flowgrad;
using namespace flowgrad::solver;
using ad::NodeId;
using ad::Tape;
using fem::StructuredGrid;

namespace {

std::vector<double> cavity_nu(const StructuredGrid& g, double factor = 1.0) {
  std::vector<double> nu(g.num_nodes());
  for (std::size_t i = 0; i < nu.size(); ++i)
    nu[i] = factor * inverse::reference_viscosity_cavity(g.coord(i).x, g.coord(i).y);
  return nu;
}

double inf_norm(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

double l2_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

std::vector<double> solve_u(const NavierStokesProblem& p, const std::vector<double>& nu) {
  Tape t;
  const auto s = newton_solve(t, p, t.constant(Tensor(nu)), {});
  return t.value(s.u).values;
}

}  // namespace

TEST_CASE("residual of simple states") {
  const StructuredGrid g(5, 5);
  const std::size_t n = g.num_nodes();
  SUBCASE("rest state with a still lid") {
    const NavierStokesProblem p(g, {}, cavity_boundary(g, 0.0));
    Tape t;
    const NodeId r = ns_residual(t, p, t.constant(Tensor(std::vector<double>(3 * n, 0.0))),
                                 t.constant(Tensor(std::vector<double>(n, 1.0))));
    CHECK(inf_norm(t.value(r).values) == 0.0);
  }
  SUBCASE("constant pressure with zero velocity") {
    const NavierStokesProblem p(g, {}, cavity_boundary(g, 0.0));
    std::vector<double> x(3 * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) x[3 * i + 2] = 2.5;
    Tape t;
    const auto r = t.value(ns_residual(t, p, t.constant(Tensor(x)),
                                       t.constant(Tensor(std::vector<double>(n, 1.0)))))
                       .values;
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(std::abs(r[3 * i]) < 1e-14);
      CHECK(std::abs(r[3 * i + 1]) < 1e-14);
    }
  }
  SUBCASE("converged state plugged back in") {
    const NavierStokesProblem p(g, {}, cavity_boundary(g, 1.0));
    Tape t;
    const NodeId nu = t.constant(Tensor(cavity_nu(g)));
    const auto s = newton_solve(t, p, nu, {});
    CHECK(inf_norm(t.value(ns_residual(t, p, s.x, nu)).values) < 1e-8);
  }
}

TEST_CASE("Newton solve") {
  SUBCASE("still lid converges in one update to rest") {
    const StructuredGrid g(6, 6);
    const NavierStokesProblem p(g, {}, cavity_boundary(g, 0.0));
    Tape t;
    const auto s = newton_solve(t, p, t.constant(Tensor(std::vector<double>(36, 1.0))), {});
    CHECK(s.iterations == 1);
    CHECK(inf_norm(t.value(s.x).values) == 0.0);
  }
  SUBCASE("lid-driven cavity on 21x21 converges quadratically") {
    const StructuredGrid g(21, 21);
    const NavierStokesProblem p(g, {}, cavity_boundary(g, 1.0));
    Tape t;
    const auto s = newton_solve(t, p, t.constant(Tensor(cavity_nu(g))), {});
    CHECK(s.iterations <= 10);
    CHECK(s.final_residual < 1e-8);
    const auto& h = s.residual_history;
    for (std::size_t k = 1; k < h.size(); ++k) CHECK(h[k] < h[k - 1]);
    // Quadratic tail: r_{k+1} <= C r_k^2 once r_k < 1e-2, with a modest C.
    for (std::size_t k = 0; k + 1 < h.size(); ++k)
      if (h[k] < 1e-2 && h[k + 1] > 1e-14) CHECK(h[k + 1] <= 1e4 * h[k] * h[k]);
  }
  SUBCASE("Dirichlet values are exact at every iterate") {
    const StructuredGrid g(6, 6);
    const NavierStokesProblem p(g, {}, cavity_boundary(g, 1.0));
    for (int iters = 1; iters <= 3; ++iters) {
      Tape t;
      NewtonConfig cfg;
      cfg.fixed_iterations = iters;
      const auto s = newton_solve(t, p, t.constant(Tensor(cavity_nu(g))), cfg);
      const auto& x = t.value(s.x).values;
      for (std::size_t d : p.dirichlet_dofs()) CHECK(x[d] == p.initial_guess()[d]);
    }
  }
  SUBCASE("viscosity scaling approaches the Stokes limit") {
    const StructuredGrid g(11, 11);
    const NavierStokesProblem p(g, {}, cavity_boundary(g, 1.0));
    const auto base = cavity_nu(g, 0.01);
    auto scaled = [&](double f) {
      auto v = base;
      for (double& x : v) x *= f;
      return solve_u(p, v);
    };
    const auto u1 = scaled(1.0), u2 = scaled(2.0), u100 = scaled(100.0), u200 = scaled(200.0);
    CHECK(l2_diff(u1, u2) > 0.0);
    CHECK(l2_diff(u100, u200) < l2_diff(u1, u2));
  }
  SUBCASE("iteration budget exceeded") {
    const StructuredGrid g(11, 11);
    const NavierStokesProblem p(g, {}, cavity_boundary(g, 1.0));
    Tape t;
    NewtonConfig cfg;
    cfg.max_iter = 1;
    try {
      newton_solve(t, p, t.constant(Tensor(cavity_nu(g, 0.01))), cfg);
      FAIL("expected NonConvergenceError");
    } catch (const NonConvergenceError& e) {
      CHECK(e.iterations() == 1);
      CHECK(e.residual() > 1e-8);
    }
  }
  SUBCASE("non-positive viscosity is rejected") {
    const StructuredGrid g(4, 4);
    const NavierStokesProblem p(g, {}, cavity_boundary(g, 1.0));
    Tape t;
    std::vector<double> nu(16, 1.0);
    nu[5] = 0.0;
    CHECK_THROWS_AS(newton_solve(t, p, t.constant(Tensor(nu)), {}), ContractError);
  }
  SUBCASE("bad configuration") {
    NewtonConfig cfg;
    cfg.tol = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ContractError);
    PhysicsConstants c;
    c.rho = -1.0;
    CHECK_THROWS_AS(c.validate(), ContractError);
  }
}

TEST_CASE("heat solve") {
  const StructuredGrid g(6, 6);
  const std::size_t n = g.num_nodes();
  PhysicsConstants no_source;
  no_source.heat_source = 0.0;
  auto zero = [&](Tape& t) { return t.constant(Tensor(std::vector<double>(n, 0.0))); };

  SUBCASE("linear boundary data without flow or source") {
    fem::DirichletSpec bc;
    for (std::size_t b : g.boundary()) bc.entries.push_back({b, fem::Component::T, g.coord(b).x});
    const HeatProblem hp(g, no_source, bc);
    Tape t;
    const auto temp = t.value(heat_solve(t, hp, zero(t), zero(t),
                                         t.constant(Tensor(std::vector<double>(n, 1.0)))))
                          .values;
    for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(temp[i] - g.coord(i).x) < 1e-13);
  }
  SUBCASE("constant boundary data with flow") {
    const HeatProblem hp(g, no_source, temperature_boundary(g, 2.5));
    Tape t;
    const NodeId u = t.constant(Tensor(testutil::random_vector(n, 1)));
    const NodeId v = t.constant(Tensor(testutil::random_vector(n, 2)));
    const auto temp = t.value(heat_solve(t, hp, u, v, t.constant(Tensor(std::vector<double>(n, 1.0))))).values;
    for (double x : temp) CHECK(std::abs(x - 2.5) < 1e-13);
  }
  SUBCASE("gradient of total temperature wrt conductivity") {
    const HeatProblem hp(g, {}, temperature_boundary(g, 0.0));
    const auto u0 = testutil::random_vector(n, 3), v0 = testutil::random_vector(n, 4);
    std::vector<double> k0(n);
    for (std::size_t i = 0; i < n; ++i) k0[i] = inverse::reference_conductivity(g.coord(i).x, g.coord(i).y);
    auto f = testutil::tape_objective([&](Tape& t, NodeId k) {
      return ops::sum(t, heat_solve(t, hp, t.constant(Tensor(u0)), t.constant(Tensor(v0)), k));
    });
    CHECK(ad::finite_difference_check(f, k0).max_relative_error < 1e-5);
  }
  SUBCASE("flipping the sign of a zero velocity changes nothing") {
    const HeatProblem hp(g, {}, temperature_boundary(g, 0.0));
    Tape t;
    const NodeId k = t.constant(Tensor(std::vector<double>(n, 1.3)));
    const NodeId negzero = t.constant(Tensor(std::vector<double>(n, -0.0)));
    const auto a = t.value(heat_solve(t, hp, zero(t), zero(t), k)).values;
    const auto b = t.value(heat_solve(t, hp, negzero, negzero, k)).values;
    CHECK(a == b);
  }
  SUBCASE("zero conductivity without flow is singular") {
    const HeatProblem hp(g, {}, temperature_boundary(g, 0.0));
    Tape t;
    CHECK_THROWS_AS(heat_solve(t, hp, zero(t), zero(t), zero(t)), SingularMatrixError);
  }
}

TEST_CASE("particle transport") {
  const std::size_t n = 9;
  SUBCASE("the flow velocity is a fixed point") {
    Tape t;
    const NodeId u = t.constant(Tensor(testutil::random_vector(n, 5)));
    const NodeId v = t.constant(Tensor(testutil::random_vector(n, 6)));
    const NodeId one = t.constant(Tensor::scalar(1.0));
    const auto s = transport_integrate(t, u, v, one, one, 0.0, 0.0, u, v, 0.1, 20);
    CHECK(s.w1.size() == 21);
    for (const NodeId w : s.w1) {
      const auto& wv = t.value(w).values;
      for (std::size_t i = 0; i < n; ++i) CHECK(wv[i] == doctest::Approx(t.value(u).values[i]).epsilon(1e-15));
    }
  }
  SUBCASE("closed form relaxation towards a constant flow") {
    Tape t;
    const double c = 0.7, dt = 0.1;
    const NodeId u = t.constant(Tensor(std::vector<double>(n, c)));
    const NodeId zero = t.constant(Tensor(std::vector<double>(n, 0.0)));
    const NodeId one = t.constant(Tensor::scalar(1.0));
    const auto s = transport_integrate(t, u, u, one, one, 0.0, 0.0, zero, zero, dt, 50);
    double prev = -1.0;
    for (int m = 0; m <= 50; ++m) {
      const double w = t.value(s.w1[m]).values[0];
      CHECK(w == doctest::Approx(c * (1.0 - std::pow(1.0 + dt, -m))).epsilon(1e-13));
      CHECK(w > prev);
      prev = w;
    }
  }
  SUBCASE("gradient wrt kappa") {
    const auto u0 = testutil::random_vector(n, 7), q = testutil::random_vector(n, 8);
    auto f = testutil::tape_objective([&](Tape& t, NodeId kappa) {
      const NodeId u = t.constant(Tensor(u0));
      const NodeId w0 = t.constant(Tensor(q));
      const auto s = transport_integrate(t, u, u, kappa, t.constant(Tensor::scalar(1.0)), 0.3, 0.0,
                                         w0, w0, 0.1, 50);
      return ops::sum(t, s.w1.back());
    });
    CHECK(ad::finite_difference_check(f, std::vector<double>{1.0}).max_relative_error < 1e-5);
  }
  SUBCASE("contracts") {
    Tape t;
    const NodeId u = t.constant(Tensor(std::vector<double>(n, 0.0)));
    const NodeId k = t.constant(Tensor::scalar(1.0));
    CHECK_THROWS_AS(transport_integrate(t, u, u, k, k, 0, 0, u, u, 0.0, 5), ContractError);
    CHECK_THROWS_AS(transport_integrate(t, u, u, u, k, 0, 0, u, u, 0.1, 5), ContractError);
  }
}
