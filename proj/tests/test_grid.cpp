#include <doctest.h>

#include <cmath>
#include <sstream>

#include "flowgrad/errors.hpp"
#include "flowgrad/grid.hpp"
#include "test_util.hpp"

using namespace flowgrad;
using fem::Point;
using fem::StructuredGrid;
using testutil::random_vector;

TEST_CASE("grid geometry and boundary sets") {
  const StructuredGrid g(4, 3);
  CHECK(g.num_nodes() == 12);
  CHECK(g.num_elements() == 6);
  CHECK(g.hx() == doctest::Approx(1.0 / 3.0));
  CHECK(g.hy() == 0.5);
  CHECK(g.node(2, 1) == 6);
  CHECK(g.coord(6).x == doctest::Approx(2.0 / 3.0));
  CHECK(g.coord(6).y == 0.5);
  CHECK(g.element_nodes(0) == std::array<std::size_t, 4>{0, 1, 5, 4});
  CHECK(g.bottom() == std::vector<std::size_t>{0, 1, 2, 3});
  CHECK(g.left() == std::vector<std::size_t>{0, 4, 8});
  CHECK(g.boundary().size() == 10);
  CHECK(std::is_sorted(g.boundary().begin(), g.boundary().end()));
  CHECK_NOTHROW(g.node_pattern()->validate());
  // Each axis contributes 3 neighbours per node, 2 at the ends.
  CHECK(g.node_pattern()->nnz() == (3 * 4 - 2) * (3 * 3 - 2));
  CHECK_THROWS_AS(StructuredGrid(1, 5), ContractError);
  CHECK_THROWS_AS(StructuredGrid(5, 0), ContractError);
}

TEST_CASE("shape functions form a partition of unity at the quadrature points") {
  const auto& q = fem::QuadraturePointSet::gauss2x2();
  double wsum = 0.0;
  for (const auto& p : q.points) {
    double s = 0.0, dxi = 0.0, deta = 0.0;
    for (int a = 0; a < 4; ++a) {
      s += p.shape[a];
      dxi += p.dshape_dxi[a];
      deta += p.dshape_deta[a];
    }
    CHECK(std::abs(s - 1.0) < 1e-14);
    CHECK(std::abs(dxi) < 1e-14);
    CHECK(std::abs(deta) < 1e-14);
    wsum += p.weight;
  }
  CHECK(wsum == doctest::Approx(4.0));
}

TEST_CASE("interpolation") {
  const StructuredGrid g(6, 5);
  const auto coords = g.coords();
  SUBCASE("grid nodes return nodal values exactly") {
    const auto v = random_vector(g.num_nodes(), 1);
    const auto out = fem::interpolate_at_points(fem::NodalField(g, v), coords);
    CHECK(out == v);
  }
  SUBCASE("linear fields are reproduced") {
    std::vector<double> v(g.num_nodes());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = coords[i].x;
    const Point p[] = {{0.3, 0.7}};
    CHECK(fem::interpolate_at_points(fem::NodalField(g, v), p)[0] == doctest::Approx(0.3).epsilon(1e-15));
  }
  SUBCASE("matches a direct shape-function evaluation") {
    const auto v = random_vector(g.num_nodes(), 2);
    const auto px = random_vector(50, 3, 0.0, 1.0);
    const auto py = random_vector(50, 4, 0.0, 1.0);
    std::vector<Point> pts;
    for (std::size_t k = 0; k < 50; ++k) pts.push_back({px[k], py[k]});
    const auto out = fem::interpolate_at_points(fem::NodalField(g, v), pts);
    for (std::size_t k = 0; k < 50; ++k) {
      // Independent oracle: locate the cell and weight its corners with (1-s)(1-t) etc.
      const double fx = pts[k].x / g.hx(), fy = pts[k].y / g.hy();
      const std::size_t i = std::min<std::size_t>(std::size_t(fx), g.nx() - 2);
      const std::size_t j = std::min<std::size_t>(std::size_t(fy), g.ny() - 2);
      const double s = fx - double(i), t = fy - double(j);
      const double ref = (1 - s) * (1 - t) * v[g.node(i, j)] + s * (1 - t) * v[g.node(i + 1, j)] +
                         s * t * v[g.node(i + 1, j + 1)] + (1 - s) * t * v[g.node(i, j + 1)];
      CHECK(std::abs(out[k] - ref) < 1e-14);
    }
  }
  SUBCASE("points outside the domain are rejected") {
    const Point p[] = {{1.2, 0.5}};
    CHECK_THROWS_AS(fem::interpolate_at_points(fem::NodalField(g, std::vector<double>(30, 0.0)), p),
                    ContractError);
  }
  SUBCASE("tape version is differentiable") {
    const Point p[] = {{0.13, 0.77}, {0.5, 0.5}, {0.99, 0.01}};
    auto f = testutil::tape_objective([&](ad::Tape& t, ad::NodeId field) {
      return testutil::weighted_sum(t, fem::interpolate_at_points(t, g, field, p));
    });
    CHECK(ad::finite_difference_check(f, random_vector(g.num_nodes(), 5), 1e-6).max_relative_error < 1e-6);
  }
}

TEST_CASE("CSV round trip is lossless") {
  const StructuredGrid g(5, 4);
  auto v = random_vector(g.num_nodes(), 9, -1e3, 1e3);
  v[3] = 1.0 / 3.0;
  v[4] = 1e-300;
  std::stringstream ss;
  fem::write_csv(ss, fem::NodalField(g, v));
  CHECK(ss.str().rfind("x,y,value\n", 0) == 0);
  const auto back = fem::read_csv(ss, g);
  CHECK(back.values == v);
  std::stringstream wrong;
  fem::write_csv(wrong, fem::NodalField(g, v));
  CHECK_THROWS_AS(fem::read_csv(wrong, StructuredGrid(4, 4)), ContractError);
}
