#include "flowgrad/inverse.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iterator>
#include <numeric>
#include <random>
#include <sstream>

#include "flowgrad/errors.hpp"
#include "flowgrad/ops.hpp"

namespace flowgrad::inverse {

std::string to_string(Observable o) {
  switch (o) {
    case Observable::u: return "u";
    case Observable::v: return "v";
    case Observable::T: return "T";
    case Observable::w1: return "w1";
    case Observable::w2: return "w2";
  }
  return "?";
}

ObservationSet make_observations(const fem::StructuredGrid& grid, const FieldMap& reference,
                                 std::size_t n_points, std::vector<Observable> components,
                                 std::uint64_t seed) {
  const std::size_t n = grid.num_nodes();
  if (n_points > n) throw ContractError("more observation points than grid nodes");
  if (components.empty()) throw ContractError("no observed components");
  ObservationSet obs;
  obs.rng_seed = seed;
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), std::size_t{0});
  if (n_points == n) {
    obs.nodes = std::move(all);
  } else {
    std::mt19937_64 rng(seed);
    std::sample(all.begin(), all.end(), std::back_inserter(obs.nodes), n_points, rng);
  }
  for (Observable c : components) {
    const auto it = reference.find(c);
    if (it == reference.end()) throw ContractError("no reference data for component " + to_string(c));
    if (it->second.size() != n) throw ContractError("reference field size != node count");
    for (std::size_t node : obs.nodes) obs.values.push_back(it->second[node]);
  }
  obs.components = std::move(components);
  return obs;
}

ObservationSet add_noise(ObservationSet obs, double epsilon, std::uint64_t seed) {
  if (!(epsilon >= 0)) throw ContractError("noise level must be >= 0");
  obs.noise_epsilon = epsilon;
  if (epsilon == 0.0) return obs;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> eta(-epsilon, epsilon);
  for (double& v : obs.values) v *= 1.0 + eta(rng);
  return obs;
}

ad::NodeId compute_loss(ad::Tape& t, const std::map<Observable, ad::NodeId>& predictions,
                        const ObservationSet& obs) {
  std::optional<ad::NodeId> total;
  for (std::size_t c = 0; c < obs.components.size(); ++c) {
    const auto it = predictions.find(obs.components[c]);
    if (it == predictions.end())
      throw ContractError("missing prediction for component " + to_string(obs.components[c]));
    const auto values = obs.component_values(c);
    const ad::NodeId picked = ops::gather(t, it->second, obs.nodes);
    const ad::NodeId term =
        ops::squared_error(t, picked, std::vector<double>(values.begin(), values.end()));
    total = total ? ops::add(t, *total, term) : term;
  }
  if (!total) throw ContractError("observation set has no components");
  return *total;
}

double relative_mse(std::span<const double> estimate, std::span<const double> reference) {
  if (estimate.size() != reference.size()) throw ContractError("relative_mse: size mismatch");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    num += (estimate[i] - reference[i]) * (estimate[i] - reference[i]);
    den += reference[i] * reference[i];
  }
  if (den == 0.0) throw ContractError("relative_mse: reference is identically zero");
  return 100.0 * num / den;
}

double relative_mse(const fem::NodalField& estimate, const fem::NodalField& reference) {
  if (estimate.grid != reference.grid) throw ContractError("relative_mse: fields on different grids");
  return relative_mse(estimate.values, reference.values);
}

std::string to_string(Experiment e) {
  switch (e) {
    case Experiment::cavity_viscosity: return "cavity_viscosity";
    case Experiment::conjugate_heat: return "conjugate_heat";
    case Experiment::passive_transport: return "passive_transport";
  }
  return "?";
}

Experiment parse_experiment(const std::string& name) {
  if (name == "cavity_viscosity") return Experiment::cavity_viscosity;
  if (name == "conjugate_heat") return Experiment::conjugate_heat;
  if (name == "passive_transport") return Experiment::passive_transport;
  throw ContractError("unknown experiment: " + name);
}

double reference_viscosity_cavity(double x, double y) {
  return 1.0 + 6.0 * x * x + x / (1.0 + 2.0 * y * y);
}

double reference_conductivity(double x, double y) { return 1.0 + x * x + x / (1.0 + y * y); }

double reference_viscosity_layered(double x) { return 0.01 + 0.01 / (1.0 + x * x); }

void ExperimentConfig::validate() const {
  if (nx < 2 || ny < 2) throw ContractError("grid needs nx, ny >= 2");
  if (!(init_scale >= 0)) throw ContractError("init_scale must be >= 0");
  if (!(floor > 0)) throw ContractError("coefficient floor must be positive");
  if (init_from_reference && variant != models::Variant::pointwise)
    throw ContractError("init_from_reference requires the pointwise variant");
  optimizer.validate(0);
  if (effective_observation_count() == 0) throw ContractError("observation count must be > 0");
  if (effective_observation_count() > nx * ny)
    throw ContractError("observation count exceeds node count");
  if (!(noise_epsilon >= 0)) throw ContractError("noise must be >= 0");
  for (double e : noise_sweep)
    if (!(e >= 0)) throw ContractError("noise sweep levels must be >= 0");
  physics.validate();
  newton.validate();
  if (!(flow_viscosity > 0)) throw ContractError("flow viscosity must be positive");
  if (!(transport_dt > 0)) throw ContractError("transport dt must be positive");
  if (transport_steps < 1) throw ContractError("transport steps must be >= 1");
  if (output_dir.empty()) throw ContractError("output directory must not be empty");
}

double ExperimentConfig::effective_offset() const {
  if (offset) return *offset;
  return experiment == Experiment::passive_transport ? 0.01 : 1.0;
}

std::size_t ExperimentConfig::effective_observation_count() const {
  if (observation_count) return *observation_count;
  switch (experiment) {
    case Experiment::cavity_viscosity: return nx * ny;
    case Experiment::conjugate_heat: return std::min<std::size_t>(40, nx * ny);
    case Experiment::passive_transport: return std::min<std::size_t>(22, nx * ny);
  }
  return 0;
}

std::vector<Observable> ExperimentConfig::observed_components() const {
  switch (experiment) {
    case Experiment::cavity_viscosity: return {Observable::u, Observable::v};
    case Experiment::conjugate_heat: return {Observable::u, Observable::v, Observable::T};
    case Experiment::passive_transport: return {Observable::w1, Observable::w2};
  }
  return {};
}

std::map<std::string, std::string> ExperimentConfig::echo() const {
  auto num = [](double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  };
  std::map<std::string, std::string> m;
  m["experiment.name"] = to_string(experiment);
  m["experiment.nx"] = std::to_string(nx);
  m["experiment.ny"] = std::to_string(ny);
  m["model.variant"] = models::to_string(variant);
  m["model.seed"] = std::to_string(model_seed);
  m["model.init_scale"] = num(init_scale);
  m["model.offset"] = num(effective_offset());
  m["model.floor"] = num(floor);
  m["model.init"] = init_from_reference ? "reference" : "random";
  m["optimizer.max_steps"] = std::to_string(optimizer.max_steps);
  m["optimizer.memory"] = std::to_string(optimizer.memory);
  m["optimizer.c1"] = num(optimizer.c1);
  m["optimizer.c2"] = num(optimizer.c2);
  m["optimizer.pgtol"] = num(optimizer.pgtol);
  m["optimizer.ftol_rel"] = num(optimizer.ftol_rel);
  m["observations.count"] = std::to_string(effective_observation_count());
  m["observations.seed"] = std::to_string(observation_seed);
  m["observations.noise"] = num(noise_epsilon);
  m["physics.rho"] = num(physics.rho);
  m["physics.cp"] = num(physics.cp);
  m["physics.body_force_f"] = num(physics.body_force_f);
  m["physics.body_force_g"] = num(physics.body_force_g);
  m["physics.heat_source"] = num(physics.heat_source);
  m["physics.kappa1"] = num(physics.kappa1);
  m["physics.kappa2"] = num(physics.kappa2);
  m["physics.q1"] = num(physics.q1);
  m["physics.q2"] = num(physics.q2);
  m["physics.beta"] = num(physics.stabilization_beta);
  m["physics.lid_velocity"] = num(lid_velocity);
  m["physics.temperature_boundary"] = num(temperature_boundary);
  m["physics.flow_viscosity"] = num(flow_viscosity);
  m["newton.tol"] = num(newton.tol);
  m["newton.max_iter"] = std::to_string(newton.max_iter);
  m["transport.dt"] = num(transport_dt);
  m["transport.steps"] = std::to_string(transport_steps);
  return m;
}

struct InverseProblem::Impl {
  ExperimentConfig config;
  fem::StructuredGrid grid;
  solver::NavierStokesProblem flow;
  solver::HeatProblem heat;
  models::FieldModel model0;
  std::vector<double> reference_coeff;
  ForwardSolution reference;
  ObservationSet obs;
  int last_iterations = 0;
  std::size_t last_clamped = 0;
  int pinned = 0;

  explicit Impl(ExperimentConfig c)
      : config(std::move(c)),
        grid(config.nx, config.ny),
        flow(grid, config.physics, solver::cavity_boundary(grid, config.lid_velocity)),
        heat(grid, config.physics, solver::temperature_boundary(grid, config.temperature_boundary)) {}

  // Builds the forward chain for a coefficient node and returns the nodal predictions.
  std::map<Observable, ad::NodeId> forward(ad::Tape& t, ad::NodeId coeff,
                                           const solver::NewtonConfig& newton,
                                           ForwardSolution* out) const {
    std::map<Observable, ad::NodeId> pred;
    const std::size_t n = grid.num_nodes();
    if (config.experiment == Experiment::conjugate_heat) {
      // The flow does not depend on the conductivity.
      ad::NodeId u, v;
      if (out || reference.u.empty()) {
        const ad::NodeId nu = t.constant(Tensor(std::vector<double>(n, config.flow_viscosity)));
        const auto ns = solver::newton_solve(t, flow, nu, newton);
        u = ns.u;
        v = ns.v;
        if (out) {
          out->p = t.value(ns.p).values;
          out->newton_iterations = ns.iterations;
          out->residual_history = ns.residual_history;
        }
      } else {
        u = t.constant(Tensor(reference.u));
        v = t.constant(Tensor(reference.v));
      }
      pred[Observable::u] = u;
      pred[Observable::v] = v;
      pred[Observable::T] = solver::heat_solve(t, heat, u, v, coeff);
      return pred;
    }
    const auto ns = solver::newton_solve(t, flow, coeff, newton);
    pred[Observable::u] = ns.u;
    pred[Observable::v] = ns.v;
    if (out) {
      out->p = t.value(ns.p).values;
      out->newton_iterations = ns.iterations;
      out->residual_history = ns.residual_history;
    }
    if (config.experiment == Experiment::passive_transport) {
      const ad::NodeId k1 = t.constant(Tensor::scalar(config.physics.kappa1));
      const ad::NodeId k2 = t.constant(Tensor::scalar(config.physics.kappa2));
      const ad::NodeId zero = t.constant(Tensor(std::vector<double>(n, 0.0)));
      const auto ps = solver::transport_integrate(t, ns.u, ns.v, k1, k2, config.physics.q1,
                                                  config.physics.q2, zero, zero,
                                                  config.transport_dt, config.transport_steps);
      pred[Observable::w1] = ps.w1.back();
      pred[Observable::w2] = ps.w2.back();
    }
    return pred;
  }

  ForwardSolution solve(std::span<const double> coefficient,
                        const solver::NewtonConfig& newton) const {
    ad::Tape t;
    ForwardSolution out;
    out.coefficient.assign(coefficient.begin(), coefficient.end());
    const ad::NodeId c = t.constant(Tensor(out.coefficient));
    const auto pred = forward(t, c, newton, &out);
    out.u = t.value(pred.at(Observable::u)).values;
    out.v = t.value(pred.at(Observable::v)).values;
    if (auto it = pred.find(Observable::T); it != pred.end()) out.temperature = t.value(it->second).values;
    if (auto it = pred.find(Observable::w1); it != pred.end()) out.w1 = t.value(it->second).values;
    if (auto it = pred.find(Observable::w2); it != pred.end()) out.w2 = t.value(it->second).values;
    return out;
  }
};

InverseProblem::InverseProblem(ExperimentConfig config) {
  config.validate();
  impl_ = std::make_unique<Impl>(std::move(config));
  auto& s = *impl_;
  const auto& cfg = s.config;
  const std::size_t n = s.grid.num_nodes();

  s.reference_coeff.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto p = s.grid.coord(i);
    switch (cfg.experiment) {
      case Experiment::cavity_viscosity: s.reference_coeff[i] = reference_viscosity_cavity(p.x, p.y); break;
      case Experiment::conjugate_heat: s.reference_coeff[i] = reference_conductivity(p.x, p.y); break;
      case Experiment::passive_transport: s.reference_coeff[i] = reference_viscosity_layered(p.x); break;
    }
  }

  s.reference = s.solve(s.reference_coeff, cfg.newton);
  FieldMap fields{{Observable::u, s.reference.u}, {Observable::v, s.reference.v}};
  if (!s.reference.temperature.empty()) fields[Observable::T] = s.reference.temperature;
  if (!s.reference.w1.empty()) {
    fields[Observable::w1] = s.reference.w1;
    fields[Observable::w2] = s.reference.w2;
  }
  s.obs = make_observations(s.grid, fields, cfg.effective_observation_count(),
                            cfg.observed_components(), cfg.observation_seed);
  s.obs = add_noise(std::move(s.obs), cfg.noise_epsilon,
                    cfg.observation_seed ^ 0x9e3779b97f4a7c15ULL);

  s.model0 = models::init_params(cfg.variant, cfg.model_seed, cfg.init_scale,
                                 {cfg.effective_offset(), cfg.floor}, n);
  if (cfg.init_from_reference) s.model0.params = s.reference_coeff;
}

InverseProblem::~InverseProblem() = default;

const ExperimentConfig& InverseProblem::config() const noexcept { return impl_->config; }
const fem::StructuredGrid& InverseProblem::grid() const noexcept { return impl_->grid; }
const models::FieldModel& InverseProblem::initial_model() const noexcept { return impl_->model0; }
const std::vector<double>& InverseProblem::reference_coefficient() const noexcept {
  return impl_->reference_coeff;
}
const ForwardSolution& InverseProblem::reference_solution() const noexcept {
  return impl_->reference;
}
const ObservationSet& InverseProblem::observations() const noexcept { return impl_->obs; }
int InverseProblem::last_newton_iterations() const noexcept { return impl_->last_iterations; }
std::size_t InverseProblem::last_clamped() const noexcept { return impl_->last_clamped; }
void InverseProblem::pin_newton_iterations(int n) { impl_->pinned = std::max(0, n); }

ForwardSolution InverseProblem::solve_forward(std::span<const double> coefficient,
                                              const solver::NewtonConfig& newton) const {
  if (coefficient.size() != impl_->grid.num_nodes())
    throw ContractError("coefficient size != node count");
  return impl_->solve(coefficient, newton);
}

double InverseProblem::evaluate(std::span<const double> theta, std::vector<double>* gradient) {
  auto& s = *impl_;
  if (theta.size() != s.model0.params.size())
    throw ContractError("parameter vector has wrong length");
  ad::Tape t;
  const ad::NodeId params = t.variable(Tensor(std::vector<double>(theta.begin(), theta.end())));
  const auto field = models::eval_field_on_grid(t, s.model0, params, s.grid);
  solver::NewtonConfig newton = s.config.newton;
  newton.trace = nullptr;
  newton.jacobian_hook = nullptr;
  newton.fixed_iterations = s.pinned;
  ForwardSolution info;
  const auto pred = s.forward(t, field.values, newton, &info);
  const ad::NodeId loss = compute_loss(t, pred, s.obs);
  s.last_iterations = info.newton_iterations;
  s.last_clamped = field.clamped;
  if (gradient) *gradient = t.backward(loss).at(params).values;
  return t.value(loss).item();
}

ad::Objective InverseProblem::objective() {
  return [this](std::span<const double> theta, std::vector<double>* g) { return evaluate(theta, g); };
}

ad::GradCheckResult gradient_spot_check(InverseProblem& problem, std::span<const double> theta,
                                        std::size_t n_samples, std::uint64_t seed, double h) {
  if (n_samples == 0) throw ContractError("gradient check needs at least one sample");
  problem.pin_newton_iterations(0);
  problem.evaluate(theta, nullptr);
  problem.pin_newton_iterations(problem.last_newton_iterations());
  std::vector<std::size_t> all(theta.size()), picked;
  std::iota(all.begin(), all.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::sample(all.begin(), all.end(), std::back_inserter(picked),
              std::min(n_samples, theta.size()), rng);
  try {
    auto result = ad::finite_difference_check(problem.objective(), theta, h, picked);
    problem.pin_newton_iterations(0);
    return result;
  } catch (...) {
    problem.pin_newton_iterations(0);
    throw;
  }
}

RunReport run_experiment(const ExperimentConfig& config) {
  const auto start = std::chrono::steady_clock::now();
  InverseProblem problem(config);
  const auto& grid = problem.grid();
  const std::size_t n = grid.num_nodes();

  RunReport report;
  report.config = config;
  report.reference = problem.reference_solution();
  report.coefficient_reference = problem.reference_coefficient();
  report.model = problem.initial_model();

  optim::OptimizerConfig opt = config.optimizer;
  if (config.variant == models::Variant::pointwise && opt.lower.empty())
    opt.lower.assign(report.model.params.size(), config.floor);

  // Per-evaluation bookkeeping so accepted steps can be matched to their solve.
  struct EvalRecord {
    std::vector<double> theta;
    int iterations;
    std::size_t clamped;
  };
  std::vector<EvalRecord> recent;
  std::uint64_t check_seed = config.model_seed * 7919 + 17;
  ad::Objective objective = [&](std::span<const double> theta, std::vector<double>* g) {
    const double f = problem.evaluate(theta, g);
    recent.push_back({std::vector<double>(theta.begin(), theta.end()),
                      problem.last_newton_iterations(), problem.last_clamped()});
    if (g && config.debug_gradcheck) {
      const std::vector<double> saved = *g;
      const auto chk = gradient_spot_check(problem, theta, 3, check_seed++);
      if (chk.max_relative_error >= 1e-4)
        throw std::runtime_error("gradient spot check failed: relative error " +
                                 std::to_string(chk.max_relative_error) + " at coordinate " +
                                 std::to_string(chk.worst_index));
      *g = saved;
    }
    return f;
  };

  models::ClampMonitor monitor;
  auto on_step = [&](int, std::span<const double> theta, double) {
    for (auto it = recent.rbegin(); it != recent.rend(); ++it) {
      if (std::equal(theta.begin(), theta.end(), it->theta.begin(), it->theta.end())) {
        report.newton_iters.push_back(it->iterations);
        monitor.record(it->clamped, n);
        break;
      }
    }
    recent.clear();
  };

  const auto result = optim::lbfgs_optimize(objective, report.model.params, opt, on_step);
  report.initial_loss = result.initial_loss;
  report.loss_history = result.loss_history;
  report.steps = result.steps;
  report.stop_reason = result.stop_reason;
  report.model.params = result.theta;
  report.coefficient_estimate = models::eval_field_values(report.model, grid);
  report.relative_mse_percent =
      relative_mse(report.coefficient_estimate, report.coefficient_reference);

  if (config.experiment == Experiment::cavity_viscosity) {
    solver::NewtonConfig newton = config.newton;
    newton.trace = nullptr;
    newton.jacobian_hook = nullptr;
    report.prediction = problem.solve_forward(report.coefficient_estimate, newton);
    const auto& ref = report.reference;
    const auto& pred = *report.prediction;
    report.prediction_mse_percent["u"] = relative_mse(pred.u, ref.u);
    report.prediction_mse_percent["v"] = relative_mse(pred.v, ref.v);
    report.prediction_mse_percent["p"] = relative_mse(pred.p, ref.p);
  }
  report.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace flowgrad::inverse
