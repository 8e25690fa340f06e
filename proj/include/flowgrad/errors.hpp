#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace flowgrad {

/// Violated precondition of a public operation (bad shapes, bad indices, bad config).
class ContractError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed computational graph (dangling input reference and similar).
class GraphError : public std::logic_error {
public:
  using std::logic_error::logic_error;
};

/// Non-finite value produced by an operator.
class NumericError : public std::runtime_error {
public:
  NumericError(std::string op, const std::string& what)
      : std::runtime_error(op + ": " + what), op_(std::move(op)) {}
  const std::string& op() const noexcept { return op_; }

private:
  std::string op_;
};

class SingularMatrixError : public std::runtime_error {
public:
  explicit SingularMatrixError(std::size_t pivot)
      : std::runtime_error("singular matrix: zero pivot at index " + std::to_string(pivot)),
        pivot_(pivot) {}
  std::size_t pivot() const noexcept { return pivot_; }

private:
  std::size_t pivot_;
};

class NonConvergenceError : public std::runtime_error {
public:
  NonConvergenceError(int iterations, double residual)
      : std::runtime_error("Newton solver did not converge after " + std::to_string(iterations) +
                           " iterations (residual " + std::to_string(residual) + ")"),
        iterations_(iterations), residual_(residual) {}
  int iterations() const noexcept { return iterations_; }
  double residual() const noexcept { return residual_; }

private:
  int iterations_;
  double residual_;
};

class LineSearchError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Raised when the positivity clamp keeps firing on a large fraction of nodes.
class DivergedParameterizationError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

}  // namespace flowgrad
