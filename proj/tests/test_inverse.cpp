#include <doctest.h>

#include <cmath>
#include <set>

#include "flowgrad/errors.hpp"
#include "flowgrad/inverse.hpp"
#include "test_util.hpp"

using namespace flowgrad;
using namespace flowgrad::inverse;
using ad::NodeId;
using ad::Tape;

namespace {

FieldMap ramp_fields(const fem::StructuredGrid& g) {
  FieldMap m;
  for (Observable o : {Observable::u, Observable::v, Observable::T}) {
    std::vector<double> v(g.num_nodes());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = 1.0 + double(i) + 0.5 * double(o);
    m[o] = v;
  }
  return m;
}

ExperimentConfig small(Experiment e) {
  ExperimentConfig c;
  c.experiment = e;
  c.nx = 6;
  c.ny = 6;
  if (e == Experiment::passive_transport) c.variant = models::Variant::dnn_layered;
  return c;
}

}  // namespace

TEST_CASE("observation sampling") {
  const fem::StructuredGrid g(21, 21);
  const auto fields = ramp_fields(g);
  SUBCASE("all nodes in index order") {
    const auto obs = make_observations(g, fields, 441, {Observable::u}, 3);
    CHECK(obs.nodes.size() == 441);
    for (std::size_t k = 0; k < 441; ++k) CHECK(obs.nodes[k] == k);
    CHECK(obs.values == fields.at(Observable::u));
  }
  SUBCASE("40 distinct random nodes, reproducible") {
    const auto a = make_observations(g, fields, 40, {Observable::u, Observable::T}, 11);
    const auto b = make_observations(g, fields, 40, {Observable::u, Observable::T}, 11);
    const auto c = make_observations(g, fields, 40, {Observable::u, Observable::T}, 12);
    CHECK(a.nodes == b.nodes);
    CHECK(a.nodes != c.nodes);
    CHECK(std::set<std::size_t>(a.nodes.begin(), a.nodes.end()).size() == 40);
    for (std::size_t n : a.nodes) CHECK(n < 441);
    CHECK(a.values.size() == 80);
    const auto t = a.component_values(1);
    for (std::size_t k = 0; k < 40; ++k) CHECK(t[k] == fields.at(Observable::T)[a.nodes[k]]);
  }
  SUBCASE("contracts") {
    CHECK_THROWS_AS(make_observations(g, fields, 442, {Observable::u}, 0), ContractError);
    CHECK_THROWS_AS(make_observations(g, fields, 5, {Observable::w1}, 0), ContractError);
  }
}

TEST_CASE("multiplicative noise") {
  const fem::StructuredGrid g(21, 21);
  const auto obs = make_observations(g, ramp_fields(g), 40, {Observable::u, Observable::v}, 1);
  CHECK(add_noise(obs, 0.0, 5).values == obs.values);
  const auto noisy = add_noise(obs, 0.05, 5);
  CHECK(noisy.noise_epsilon == 0.05);
  bool changed = false;
  for (std::size_t k = 0; k < obs.values.size(); ++k) {
    CHECK(std::abs(noisy.values[k] / obs.values[k] - 1.0) <= 0.05 + 1e-15);
    changed = changed || noisy.values[k] != obs.values[k];
  }
  CHECK(changed);
  CHECK(add_noise(obs, 0.01, 9).values == add_noise(obs, 0.01, 9).values);
  CHECK_THROWS_AS(add_noise(obs, -0.1, 1), ContractError);
}

TEST_CASE("loss") {
  const fem::StructuredGrid g(3, 3);
  const auto fields = ramp_fields(g);
  const auto obs = make_observations(g, fields, 4, {Observable::u, Observable::v}, 2);
  SUBCASE("exact predictions") {
    Tape t;
    const std::map<Observable, NodeId> pred{{Observable::u, t.constant(Tensor(fields.at(Observable::u)))},
                                            {Observable::v, t.constant(Tensor(fields.at(Observable::v)))}};
    CHECK(t.value(compute_loss(t, pred, obs)).item() == 0.0);
  }
  SUBCASE("single observation off by two") {
    ObservationSet one{{4}, {Observable::T}, {1.0}, 0.0, 0};
    Tape t;
    std::vector<double> v(9, 0.0);
    v[4] = 3.0;
    const NodeId p = t.variable(Tensor(v));
    const NodeId l = compute_loss(t, {{Observable::T, p}}, one);
    CHECK(t.value(l).item() == 4.0);
    auto g2 = t.backward(l).at(p).values;
    CHECK(g2[4] == 4.0);
    CHECK(g2[0] == 0.0);
  }
  SUBCASE("gradient is 2 (pred - obs)") {
    auto f = testutil::tape_objective([&](Tape& t, NodeId u) {
      return compute_loss(t, {{Observable::u, u}, {Observable::v, ops::scale(t, u, 2.0)}}, obs);
    });
    CHECK(ad::finite_difference_check(f, testutil::random_vector(9, 3)).max_relative_error < 1e-8);
  }
  SUBCASE("missing component") {
    Tape t;
    const std::map<Observable, NodeId> pred{{Observable::u, t.constant(Tensor(fields.at(Observable::u)))}};
    CHECK_THROWS_AS(compute_loss(t, pred, obs), ContractError);
  }
}

TEST_CASE("relative MSE") {
  const std::vector<double> ref{1.0, -2.0, 3.0};
  CHECK(relative_mse(ref, ref) == 0.0);
  CHECK(relative_mse(std::vector<double>(3, 0.0), ref) == 100.0);
  CHECK(relative_mse(std::vector<double>{1.1, -2.2, 3.3}, ref) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS_AS(relative_mse(ref, std::vector<double>(3, 0.0)), ContractError);
  const fem::StructuredGrid g1(2, 2), g2(2, 2);
  CHECK_THROWS_AS(relative_mse(fem::NodalField(g1, {1, 1, 1, 1}), fem::NodalField(g2, {1, 1, 1, 1})),
                  ContractError);
}

TEST_CASE("full-chain gradients match finite differences") {
  for (Experiment e : {Experiment::cavity_viscosity, Experiment::conjugate_heat,
                       Experiment::passive_transport}) {
    CAPTURE(to_string(e));
    InverseProblem problem(small(e));
    const auto r = gradient_spot_check(problem, problem.initial_model().params, 5, 17);
    CHECK(r.ad_gradient.size() == 5);
    CHECK(r.max_relative_error < 1e-5);
  }
}

TEST_CASE("self-consistency: the reference field is a zero-loss minimum") {
  auto cfg = small(Experiment::cavity_viscosity);
  cfg.variant = models::Variant::pointwise;
  cfg.init_from_reference = true;
  const auto r = run_experiment(cfg);
  CHECK(r.initial_loss == 0.0);
  CHECK(r.relative_mse_percent == 0.0);
  CHECK(r.steps == 0);
}

TEST_CASE("pointwise interpolation capacity on a small grid") {
  auto cfg = small(Experiment::cavity_viscosity);
  cfg.variant = models::Variant::pointwise;
  // Nodal viscosity is poorly conditioned; 100 steps only reach ~6e-7.
  cfg.optimizer.max_steps = 500;
  const auto r = run_experiment(cfg);
  CHECK(r.final_loss() < 1e-8);
}

TEST_CASE("run reports are deterministic and well formed") {
  auto cfg = small(Experiment::conjugate_heat);
  cfg.optimizer.max_steps = 15;
  cfg.noise_epsilon = 0.01;
  const auto a = run_experiment(cfg);
  const auto b = run_experiment(cfg);
  CHECK(a.loss_history == b.loss_history);
  CHECK(a.coefficient_estimate == b.coefficient_estimate);
  CHECK(a.relative_mse_percent == b.relative_mse_percent);
  CHECK(a.loss_history.size() == std::size_t(a.steps));
  CHECK(a.newton_iters.size() == std::size_t(a.steps));
  for (std::size_t k = 1; k < a.loss_history.size(); ++k) CHECK(a.loss_history[k] <= a.loss_history[k - 1]);
  CHECK(a.relative_mse_percent >= 0.0);
  CHECK(a.config.echo().at("observations.count") == "36");
}

TEST_CASE("cavity runs re-solve with the estimate") {
  auto cfg = small(Experiment::cavity_viscosity);
  cfg.optimizer.max_steps = 5;
  const auto r = run_experiment(cfg);
  REQUIRE(r.prediction.has_value());
  CHECK(r.prediction_mse_percent.count("p") == 1);
  CHECK(r.prediction->p.size() == 36);
}

TEST_CASE("debug gradient checking inside the optimizer") {
  auto cfg = small(Experiment::passive_transport);
  cfg.optimizer.max_steps = 3;
  cfg.debug_gradcheck = true;
  CHECK_NOTHROW(run_experiment(cfg));
}

TEST_CASE("experiment defaults and validation") {
  ExperimentConfig c;
  CHECK(c.effective_observation_count() == 441);
  CHECK(c.effective_offset() == 1.0);
  c.experiment = Experiment::conjugate_heat;
  CHECK(c.effective_observation_count() == 40);
  c.experiment = Experiment::passive_transport;
  CHECK(c.effective_observation_count() == 22);
  CHECK(c.effective_offset() == 0.01);
  CHECK(c.observed_components() == std::vector<Observable>{Observable::w1, Observable::w2});
  CHECK(parse_experiment("conjugate_heat") == Experiment::conjugate_heat);
  CHECK_THROWS_AS(parse_experiment("poisson"), ContractError);

  ExperimentConfig bad;
  bad.nx = 0;
  CHECK_THROWS_AS(bad.validate(), ContractError);
  bad = {};
  bad.observation_count = 1000;
  CHECK_THROWS_AS(bad.validate(), ContractError);
  bad = {};
  bad.init_from_reference = true;
  CHECK_THROWS_AS(bad.validate(), ContractError);
}
