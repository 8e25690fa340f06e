#include <doctest.h>

#include <sstream>

#include "flowgrad/config.hpp"
#include "flowgrad/errors.hpp"

using namespace flowgrad;

namespace {
inverse::ExperimentConfig parse(const std::string& text) {
  std::istringstream is(text);
  return config::parse_config(is);
}
}  // namespace

TEST_CASE("config parsing") {
  SUBCASE("empty file gives defaults") {
    const auto c = parse("");
    CHECK(c.experiment == inverse::Experiment::cavity_viscosity);
    CHECK(c.nx == 21);
    CHECK(c.variant == models::Variant::dnn2d);
  }
  SUBCASE("every section") {
    const auto c = parse(R"(
; comment
[experiment]
name = conjugate_heat
nx = 6
ny = 7
[model]
variant = pointwise
seed = 4
init = random
[optimizer]
max_steps = 12
[observations]
count = 10
seed = 3
noise = 0.01
noise_sweep = 0, 0.01 ,0.05
[physics]
beta = 0.02
lid_velocity = 0
[newton]
tol = 1e-9
[transport]
steps = 5
[output]
dir = /tmp/x
)");
    CHECK(c.experiment == inverse::Experiment::conjugate_heat);
    CHECK(c.nx == 6);
    CHECK(c.ny == 7);
    CHECK(c.variant == models::Variant::pointwise);
    CHECK(c.model_seed == 4);
    CHECK(c.optimizer.max_steps == 12);
    CHECK(c.effective_observation_count() == 10);
    CHECK(c.observation_seed == 3);
    CHECK(c.noise_epsilon == 0.01);
    CHECK(c.noise_sweep == std::vector<double>{0.0, 0.01, 0.05});
    CHECK(c.physics.stabilization_beta == 0.02);
    CHECK(c.lid_velocity == 0.0);
    CHECK(c.newton.tol == 1e-9);
    CHECK(c.transport_steps == 5);
    CHECK(c.output_dir == "/tmp/x");
  }
}

TEST_CASE("config rejection") {
  CHECK_THROWS_AS(parse("[experiment]\ncolour = red\n"), ContractError);
  CHECK_THROWS_AS(parse("[mystery]\nnx = 3\n"), ContractError);
  CHECK_THROWS_AS(parse("[experiment]\nnx = 6x\n"), ContractError);
  CHECK_THROWS_AS(parse("[experiment]\nnx = -1\n"), ContractError);
  CHECK_THROWS_AS(parse("[experiment]\nnx = 0\n"), ContractError);
  CHECK_THROWS_AS(parse("[experiment]\nname = poisson\n"), ContractError);
  CHECK_THROWS_AS(parse("[model]\ninit = maybe\n"), ContractError);
  CHECK_THROWS_AS(parse("[observations]\nnoise = abc\n"), ContractError);
  CHECK_THROWS_AS(parse("nx = 3\n"), ContractError);
  CHECK_THROWS_AS(parse("[experiment\n"), ContractError);
  CHECK_THROWS_AS(config::load_config("/nonexistent/flowgrad.ini"), ContractError);
}
