#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "flowgrad/tape.hpp"

namespace flowgrad::optim {

struct OptimizerConfig {
  int max_steps = 100;
  int memory = 10;
  double c1 = 1e-4;  // sufficient decrease
  double c2 = 0.9;   // curvature
  /// Per-variable bounds; empty means unbounded. Use +-infinity for free entries.
  std::vector<double> lower;
  std::vector<double> upper;
  double pgtol = 1e-10;     // projected-gradient infinity norm
  double ftol_rel = 1e-12;  // relative loss change between accepted steps
  /// Consecutive failed trial evaluations tolerated inside one line search.
  int max_rejections = 20;
  int max_line_search_evals = 40;

  void validate(std::size_t n) const;
};

struct OptimizationResult {
  std::vector<double> theta;
  double initial_loss = 0.0;
  std::vector<double> loss_history;  // one entry per accepted step
  std::vector<double> final_gradient;
  int steps = 0;
  int evaluations = 0;
  int rejected_trials = 0;
  std::string stop_reason;
};

/// Called after every accepted step with the new iterate and its loss.
using StepCallback = std::function<void(int step, std::span<const double> theta, double loss)>;

/// Limited-memory BFGS with a strong-Wolfe line search; bound-constrained
/// variables are handled by gradient projection. Objective failures of type
/// NonConvergenceError, SingularMatrixError or NumericError during the line
/// search reject the trial point and halve the step.
OptimizationResult lbfgs_optimize(const ad::Objective& objective, std::vector<double> theta0,
                                  const OptimizerConfig& config, const StepCallback& on_step = {});

}  // namespace flowgrad::optim
