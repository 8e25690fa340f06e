#include <doctest.h>

#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

#include "flowgrad/errors.hpp"
#include "flowgrad/field_models.hpp"
#include "test_util.hpp"

using namespace flowgrad;
using namespace flowgrad::models;
using ad::NodeId;
using ad::Tape;
using testutil::random_vector;

namespace {

std::vector<double> eval_raw(const std::vector<std::size_t>& sizes, const std::vector<double>& params,
                             const std::vector<double>& points) {
  Tape t;
  return t.value(mlp_eval(t, sizes, t.constant(Tensor(params)), points)).values;
}

}  // namespace

TEST_CASE("MLP evaluation") {
  const auto sizes = default_layer_sizes(Variant::dnn2d);
  const std::size_t n = MLPParams::count(sizes);
  CHECK(n == 2 * 20 + 20 + 2 * (20 * 20 + 20) + 20 + 1);
  const std::vector<double> pts{0.0, 0.0, 0.5, 0.25, 1.0, 1.0};

  SUBCASE("all-zero parameters give zero output") {
    CHECK(eval_raw(sizes, std::vector<double>(n, 0.0), pts) == std::vector<double>(3, 0.0));
  }
  SUBCASE("zero hidden weights pass the last bias through") {
    std::vector<double> p(n, 0.0);
    p.back() = 0.75;
    CHECK(eval_raw(sizes, p, pts) == std::vector<double>(3, 0.75));
  }
  SUBCASE("gradient wrt every parameter") {
    const auto grid_pts = random_vector(2 * 7, 3, 0.0, 1.0);
    auto f = testutil::tape_objective([&](Tape& t, NodeId p) {
      return ops::sum(t, mlp_eval(t, sizes, p, grid_pts));
    });
    CHECK(ad::finite_difference_check(f, random_vector(n, 4, -0.5, 0.5), 1e-5).max_relative_error < 1e-6);
  }
  SUBCASE("output stays within the tanh bound") {
    const FieldModel m{Variant::dnn2d, sizes, {0.0, -1e300}, 0, random_vector(n, 5, -2.0, 2.0)};
    const auto y = eval_raw(sizes, m.params, random_vector(2 * 100, 6, 0.0, 1.0));
    const double bound = output_bound(m);
    for (double v : y) CHECK(std::abs(v) <= bound);
  }
  SUBCASE("non-finite parameters are rejected") {
    std::vector<double> p(n, 0.0);
    p[7] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(eval_raw(sizes, p, pts), NumericError);
  }
}

TEST_CASE("field evaluation on the grid") {
  const fem::StructuredGrid g(21, 21);
  SUBCASE("dnn2d with zero parameters is the offset everywhere") {
    FieldModel m = init_params(Variant::dnn2d, 0, 0.0, {1.0, 1e-6}, g.num_nodes());
    const auto v = eval_field_values(m, g);
    CHECK(v.size() == 441);
    CHECK(v == std::vector<double>(441, 1.0));
  }
  SUBCASE("pointwise is the identity on its parameters") {
    FieldModel m = init_params(Variant::pointwise, 0, 1.0, {1.0, 1e-6}, g.num_nodes());
    CHECK(m.params == std::vector<double>(441, 1.0));
    m.params = random_vector(441, 7, 0.1, 2.0);
    CHECK(eval_field_values(m, g) == m.params);
  }
  SUBCASE("layered model is constant along y") {
    const FieldModel m = init_params(Variant::dnn_layered, 3, 1.0, {0.01, 1e-6}, g.num_nodes());
    const auto v = eval_field_values(m, g);
    for (std::size_t i = 0; i < g.nx(); ++i)
      for (std::size_t j = 1; j < g.ny(); ++j) CHECK(v[g.node(i, j)] == v[g.node(i, 0)]);
  }
  SUBCASE("floor clamps and reports") {
    FieldModel m = init_params(Variant::dnn2d, 0, 0.0, {-0.5, 1e-6}, g.num_nodes());
    Tape t;
    const auto e = eval_field_on_grid(t, m, t.variable(Tensor(m.params)), g);
    CHECK(e.clamped == 441);
    CHECK(t.value(e.values).values == std::vector<double>(441, 1e-6));
  }
}

TEST_CASE("initialization") {
  const auto a = init_params(Variant::dnn2d, 42, 1.0, {}, 441);
  const auto b = init_params(Variant::dnn2d, 42, 1.0, {}, 441);
  const auto c = init_params(Variant::dnn2d, 43, 1.0, {}, 441);
  CHECK(a.params == b.params);
  CHECK(a.params != c.params);
  const MLPParams p{a.layer_sizes, a.params};
  const auto layers = p.unflatten();
  const double bound = std::sqrt(6.0 / 40.0);
  double biggest = 0.0;
  for (double w : layers[1].weights) biggest = std::max(biggest, std::abs(w));
  CHECK(biggest <= bound);
  CHECK(biggest > 0.5 * bound);
  for (const auto& l : layers)
    for (double bias : l.biases) CHECK(bias == 0.0);
  CHECK(init_params(Variant::pointwise, 0, 1.0, {0.01, 1e-6}, 10).params == std::vector<double>(10, 0.01));
}

TEST_CASE("flatten and unflatten round trip") {
  const auto m = init_params(Variant::dnn_layered, 9, 1.0, {}, 0);
  MLPParams p{m.layer_sizes, m.params};
  for (double& v : p.flat) v += 0.125;  // nonzero biases too
  const auto back = MLPParams::flatten(p.layer_sizes, p.unflatten());
  CHECK(back.flat == p.flat);
  CHECK(p.bias_offset(0) == 20);
  CHECK(p.weight_offset(1) == 40);
}

TEST_CASE("checkpoints round trip bit-exactly") {
  for (Variant v : {Variant::dnn2d, Variant::dnn_layered, Variant::pointwise}) {
    FieldModel m = init_params(v, 5, 1.0, {}, 36);
    m.params[0] = 1.0 / 3.0;
    m.params[1] = -0.0;
    std::stringstream ss;
    write_checkpoint(ss, m);
    const FieldModel back = read_checkpoint(ss);
    CHECK(back.variant == v);
    CHECK(back.layer_sizes == m.layer_sizes);
    CHECK(back.seed == 5);
    CHECK(std::memcmp(back.params.data(), m.params.data(), m.params.size() * sizeof(double)) == 0);
  }
  std::stringstream bad("dnn2d,2x20x1,0\nabc");
  CHECK_THROWS_AS(read_checkpoint(bad), ContractError);
}

TEST_CASE("variant names") {
  CHECK(parse_variant("dnn_layered") == Variant::dnn_layered);
  CHECK(to_string(Variant::pointwise) == "pointwise");
  CHECK_THROWS_AS(parse_variant("cnn"), ContractError);
}

TEST_CASE("clamp monitor") {
  ClampMonitor mon(0.1, 3);
  mon.record(50, 100);
  mon.record(50, 100);
  mon.record(5, 100);  // resets the streak
  CHECK(mon.streak() == 0);
  mon.record(11, 100);
  mon.record(11, 100);
  CHECK_THROWS_AS(mon.record(11, 100), DivergedParameterizationError);
}
