#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "flowgrad/field_models.hpp"
#include "flowgrad/grid.hpp"
#include "flowgrad/lbfgs.hpp"
#include "flowgrad/ns_solver.hpp"
#include "flowgrad/tape.hpp"

namespace flowgrad::inverse {

enum class Observable { u, v, T, w1, w2 };
std::string to_string(Observable o);

/// Observed values at grid nodes. `values[c * nodes.size() + k]` is component
/// `components[c]` at node `nodes[k]`.
struct ObservationSet {
  std::vector<std::size_t> nodes;
  std::vector<Observable> components;
  std::vector<double> values;
  double noise_epsilon = 0.0;
  std::uint64_t rng_seed = 0;

  std::span<const double> component_values(std::size_t c) const {
    return std::span(values).subspan(c * nodes.size(), nodes.size());
  }
};

using FieldMap = std::map<Observable, std::vector<double>>;

/// Distinct nodes drawn uniformly without replacement. Asking for every node
/// returns all of them in index order.
ObservationSet make_observations(const fem::StructuredGrid& grid, const FieldMap& reference,
                                 std::size_t n_points, std::vector<Observable> components,
                                 std::uint64_t seed);

/// value <- value * (1 + eta), eta ~ Uniform[-epsilon, epsilon] per observation.
ObservationSet add_noise(ObservationSet obs, double epsilon, std::uint64_t seed);

/// Sum of squared differences over all observed components and locations.
/// `predictions` maps each observed component to a nodal tensor on the tape.
ad::NodeId compute_loss(ad::Tape& t, const std::map<Observable, ad::NodeId>& predictions,
                        const ObservationSet& obs);

/// 100 * sum (est - ref)^2 / sum ref^2.
double relative_mse(std::span<const double> estimate, std::span<const double> reference);
double relative_mse(const fem::NodalField& estimate, const fem::NodalField& reference);

enum class Experiment { cavity_viscosity, conjugate_heat, passive_transport };
std::string to_string(Experiment e);
Experiment parse_experiment(const std::string& name);

/// Reference coefficient fields.
double reference_viscosity_cavity(double x, double y);
double reference_conductivity(double x, double y);
double reference_viscosity_layered(double x);

struct ExperimentConfig {
  Experiment experiment = Experiment::cavity_viscosity;
  std::size_t nx = 21;
  std::size_t ny = 21;

  models::Variant variant = models::Variant::dnn2d;
  std::uint64_t model_seed = 0;
  double init_scale = 1.0;
  std::optional<double> offset;  // defaults per experiment
  double floor = 1e-6;
  /// Start a pointwise model at the reference field (self-consistency runs).
  bool init_from_reference = false;

  optim::OptimizerConfig optimizer;

  std::optional<std::size_t> observation_count;  // defaults per experiment
  std::uint64_t observation_seed = 0;
  double noise_epsilon = 0.0;
  std::vector<double> noise_sweep;  // one run per level when non-empty

  solver::PhysicsConstants physics;
  double lid_velocity = 1.0;
  double temperature_boundary = 0.0;
  double flow_viscosity = 1.0;  // constant viscosity of the heat experiment's flow
  solver::NewtonConfig newton;
  double transport_dt = 0.1;
  int transport_steps = 50;

  std::string output_dir = "out";
  bool verbose = false;
  bool debug_gradcheck = false;

  /// Throws ContractError on invalid values.
  void validate() const;
  double effective_offset() const;
  std::size_t effective_observation_count() const;
  std::vector<Observable> observed_components() const;
  /// Flat key/value dump of every setting.
  std::map<std::string, std::string> echo() const;
};

/// Forward solutions at the nodes.
struct ForwardSolution {
  std::vector<double> coefficient;
  std::vector<double> u, v, p;
  std::vector<double> temperature;  // conjugate_heat only
  std::vector<double> w1, w2;       // passive_transport only, final step
  int newton_iterations = 0;
  std::vector<double> residual_history;
};

/// The experiment as an objective of the model parameters.
class InverseProblem {
public:
  explicit InverseProblem(ExperimentConfig config);
  ~InverseProblem();
  InverseProblem(const InverseProblem&) = delete;
  InverseProblem& operator=(const InverseProblem&) = delete;

  const ExperimentConfig& config() const noexcept;
  const fem::StructuredGrid& grid() const noexcept;
  const models::FieldModel& initial_model() const noexcept;
  const std::vector<double>& reference_coefficient() const noexcept;
  const ForwardSolution& reference_solution() const noexcept;
  const ObservationSet& observations() const noexcept;

  /// Loss and gradient wrt the model parameters.
  double evaluate(std::span<const double> theta, std::vector<double>* gradient);
  ad::Objective objective();

  /// Newton iterations and clamped-node count of the last evaluation.
  int last_newton_iterations() const noexcept;
  std::size_t last_clamped() const noexcept;
  /// Force a fixed number of Newton updates (0 restores adaptive stopping).
  void pin_newton_iterations(int n);

  /// Forward solve with an arbitrary coefficient field.
  ForwardSolution solve_forward(std::span<const double> coefficient,
                                const solver::NewtonConfig& newton) const;

private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct RunReport {
  ExperimentConfig config;
  double initial_loss = 0.0;
  std::vector<double> loss_history;
  std::vector<int> newton_iters;
  int steps = 0;
  std::string stop_reason;
  double relative_mse_percent = 0.0;
  std::vector<double> coefficient_estimate;
  std::vector<double> coefficient_reference;
  /// cavity_viscosity: relative MSE (%) of u, v, p after re-solving with the estimate.
  std::map<std::string, double> prediction_mse_percent;
  ForwardSolution reference;
  std::optional<ForwardSolution> prediction;
  models::FieldModel model;
  double wall_clock_seconds = 0.0;

  double final_loss() const { return loss_history.empty() ? initial_loss : loss_history.back(); }
};

/// Synthesize observations, fit the field model with L-BFGS, report errors.
RunReport run_experiment(const ExperimentConfig& config);

/// Spot finite-difference check at `theta`: `n_samples` coordinates chosen
/// with `seed`, Newton iterations pinned to the count at `theta`.
ad::GradCheckResult gradient_spot_check(InverseProblem& problem, std::span<const double> theta,
                                        std::size_t n_samples, std::uint64_t seed,
                                        double h = 1e-5);

}  // namespace flowgrad::inverse
