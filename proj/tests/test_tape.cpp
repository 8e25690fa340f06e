#include <doctest.h>

#include <cmath>

#include "flowgrad/errors.hpp"
#include "flowgrad/ops.hpp"
#include "flowgrad/tape.hpp"
#include "test_util.hpp"

using namespace flowgrad;
using ad::NodeId;
using ad::Tape;

TEST_CASE("record evaluates elementary ops") {
  Tape t;
  const auto x = t.constant(Tensor({1.0, 2.0}));
  const auto y = t.constant(Tensor({3.0, 4.0}));
  CHECK(t.value(ops::add(t, x, y)).values == std::vector<double>{4.0, 6.0});
  CHECK(t.value(ops::scale(t, x, 1.0)).values == t.value(x).values);
  const auto eye = t.constant(Tensor({2, 2}, {1.0, 0.0, 0.0, 1.0}));
  const auto b = t.constant(Tensor({5.0, 7.0}));
  CHECK(t.value(ops::matmul(t, eye, b)).values == std::vector<double>{5.0, 7.0});
}

TEST_CASE("record rejects inputs that are not on the tape") {
  Tape t;
  const auto x = t.constant(Tensor({1.0}));
  const auto op = ad::OpRegistry::global().find("add");
  CHECK_THROWS_AS(t.record(op, {x, NodeId{42}}, Tensor({1.0})), GraphError);
  CHECK_THROWS_AS(t.value(NodeId{7}), GraphError);
}

TEST_CASE("backward on simple losses") {
  SUBCASE("sum") {
    Tape t;
    const auto x = t.variable(Tensor({0.3, -1.0, 2.0}));
    const auto g = t.backward(ops::sum(t, x));
    CHECK(g.at(x).values == std::vector<double>{1.0, 1.0, 1.0});
  }
  SUBCASE("half squared norm") {
    Tape t;
    const auto x = t.variable(Tensor({2.0, -1.0}));
    const auto loss = ops::scale(t, ops::dot(t, x, x), 0.5);
    CHECK(t.backward(loss).at(x).values == std::vector<double>{2.0, -1.0});
  }
  SUBCASE("sum of A x gives column sums of A") {
    const std::vector<double> a = testutil::random_vector(12, 3);
    auto f = testutil::tape_objective([&](Tape& t, NodeId x) {
      return ops::sum(t, ops::matmul(t, t.constant(Tensor({3, 4}, a)), x));
    });
    const std::vector<double> x0 = testutil::random_vector(4, 4);
    std::vector<double> g;
    f(x0, &g);
    for (std::size_t j = 0; j < 4; ++j)
      CHECK(g[j] == doctest::Approx(a[j] + a[4 + j] + a[8 + j]).epsilon(1e-14));
    CHECK(ad::finite_difference_check(f, x0, 1e-6).max_relative_error < 1e-6);
  }
}

TEST_CASE("backward contract") {
  Tape t;
  const auto x = t.variable(Tensor({1.0, 2.0}));
  CHECK_THROWS_AS(t.backward(x), ContractError);
  CHECK_THROWS_AS(t.backward(NodeId{5}), GraphError);

  SUBCASE("unused variables get zero gradients") {
    const auto y = t.variable(Tensor({4.0}));
    const auto g = t.backward(ops::sum(t, x));
    CHECK(g.at(y).values == std::vector<double>{0.0});
  }
}

TEST_CASE("non-finite gradient names the producing op") {
  ad::OpRegistry::global().add(ad::CustomOpDef{
      "test_nan_backward",
      [](ad::InputValues in, std::any&) { return *in[0]; },
      [](const Tensor& g, ad::InputValues, const Tensor&, const std::any&) {
        return std::vector<Tensor>{Tensor(std::vector<double>(g.size(), std::nan("")))};
      }});
  Tape t;
  const auto x = t.variable(Tensor({1.0}));
  const auto y = t.apply(ad::OpRegistry::global().find("test_nan_backward"), {x});
  try {
    t.backward(ops::sum(t, y));
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(e.op() == "test_nan_backward");
  }
}

TEST_CASE("fan-out accumulates and backward is repeatable") {
  Tape t;
  const auto x = t.variable(Tensor({1.5, -0.5}));
  const auto y = ops::mul(t, x, x);                     // x^2
  const auto loss = ops::sum(t, ops::add(t, y, x));     // sum x^2 + x
  const auto g1 = t.backward(loss);
  const auto g2 = t.backward(loss);
  CHECK(g1.at(x).values == std::vector<double>{4.0, 0.0});
  CHECK(g1.at(x).values == g2.at(x).values);
}

TEST_CASE("gradient of a sum of losses is the sum of gradients") {
  Tape t;
  const auto x = t.variable(Tensor(testutil::random_vector(5, 8)));
  const auto l1 = ops::sum(t, ops::tanh(t, x));
  const auto l2 = ops::dot(t, x, x);
  const auto g1 = t.backward(l1).at(x).values;
  const auto g2 = t.backward(l2).at(x).values;
  const auto g = t.backward(ops::add(t, l1, l2)).at(x).values;
  for (std::size_t i = 0; i < g.size(); ++i) CHECK(g[i] == doctest::Approx(g1[i] + g2[i]));
}

TEST_CASE("tape evaluation is deterministic") {
  auto run = [] {
    Tape t;
    const auto x = t.variable(Tensor(testutil::random_vector(6, 1)));
    const auto loss = ops::sum(t, ops::tanh(t, ops::mul(t, x, ops::add_scalar(t, x, 0.3))));
    return std::pair{t.value(loss).item(), t.backward(loss).at(x).values};
  };
  const auto a = run();
  const auto b = run();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}

TEST_CASE("finite_difference_check") {
  SUBCASE("exact quadratic") {
    ad::Objective f = [](std::span<const double> th, std::vector<double>* g) {
      double s = 0.0;
      for (double v : th) s += 0.5 * v * v;
      if (g) g->assign(th.begin(), th.end());
      return s;
    };
    const auto r = ad::finite_difference_check(f, testutil::random_vector(7, 2), 1e-5);
    CHECK(r.max_relative_error < 1e-8);
    CHECK(r.ad_gradient.size() == 7);
  }
  SUBCASE("constant function") {
    ad::Objective f = [](std::span<const double> th, std::vector<double>* g) {
      if (g) g->assign(th.size(), 0.0);
      return 3.0;
    };
    const auto r = ad::finite_difference_check(f, std::vector<double>{1.0, 2.0});
    CHECK(r.max_relative_error == 0.0);
    CHECK(r.fd_gradient == std::vector<double>{0.0, 0.0});
  }
  SUBCASE("failure at a perturbed point reports the index") {
    ad::Objective f = [](std::span<const double> th, std::vector<double>* g) {
      if (th[1] > 1.0) throw std::runtime_error("solver blew up");
      if (g) g->assign(th.size(), 1.0);
      return th[0] + th[1];
    };
    try {
      ad::finite_difference_check(f, std::vector<double>{0.0, 1.0}, 1e-3);
      FAIL("expected PerturbationError");
    } catch (const ad::PerturbationError& e) {
      CHECK(e.index() == 1);
    }
  }
}
