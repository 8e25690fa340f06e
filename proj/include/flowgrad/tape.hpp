#pragma once

#include <any>
#include <compare>
#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "flowgrad/tensor.hpp"

namespace flowgrad::ad {

/// Reference to a node on a Tape. Only meaningful for the tape that issued it.
struct NodeId {
  std::size_t index = 0;
  auto operator<=>(const NodeId&) const = default;
};

/// Index into the operator registry.
struct OpId {
  std::size_t index = 0;
  auto operator<=>(const OpId&) const = default;
};

using InputValues = std::span<const Tensor* const>;

/// A differentiable operator. `forward` may stash whatever it needs for the
/// backward pass in the context. `backward` returns one gradient per input;
/// an empty Tensor marks an input as non-differentiable.
struct CustomOpDef {
  std::string name;
  std::function<Tensor(InputValues inputs, std::any& context)> forward;
  std::function<std::vector<Tensor>(const Tensor& grad_output, InputValues inputs,
                                    const Tensor& output, const std::any& context)>
      backward;
};

/// Process-wide table of operators. Registration is thread-safe and ids are stable.
class OpRegistry {
public:
  static OpRegistry& global();

  OpId add(CustomOpDef def);
  /// Throws GraphError if no operator has this name.
  OpId find(const std::string& name) const;
  const CustomOpDef& get(OpId id) const;
  /// Swap the backward rule of an existing operator. Used by test builds.
  void replace_backward(const std::string& name, decltype(CustomOpDef::backward) backward);

private:
  OpRegistry() = default;
  struct Impl;
  Impl& impl() const;
};

using GradientMap = std::map<NodeId, Tensor>;

class Tape {
public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  /// Trainable leaf; its gradient is returned by backward().
  NodeId variable(Tensor value);
  NodeId constant(Tensor value);

  /// Append a node whose output was computed by the caller.
  NodeId record(OpId op, std::vector<NodeId> inputs, Tensor output, std::any context = {});
  /// Run the operator's forward on the input values, then record it.
  NodeId apply(OpId op, std::vector<NodeId> inputs, std::any context = {});

  const Tensor& value(NodeId id) const;
  bool is_variable(NodeId id) const;
  std::size_t size() const noexcept { return nodes_.size(); }
  std::vector<NodeId> variables() const;

  /// Reverse sweep from a scalar node. Gradients of non-variable nodes are
  /// discarded; the returned map has one entry per variable (zeros when the
  /// loss does not depend on it).
  GradientMap backward(NodeId loss) const;

private:
  struct Node {
    OpId op;
    bool leaf = false;
    bool trainable = false;
    std::vector<NodeId> inputs;
    Tensor output;
    std::any context;
  };
  void check(NodeId id) const;
  std::vector<Node> nodes_;
};

/// Objective returning the loss and, when `gradient` is non-null, filling it.
using Objective = std::function<double(std::span<const double> theta, std::vector<double>* gradient)>;

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  std::vector<double> ad_gradient;
  std::vector<double> fd_gradient;
};

/// Thrown when the objective fails at a perturbed point.
class PerturbationError : public std::runtime_error {
public:
  PerturbationError(std::size_t index, const std::string& what)
      : std::runtime_error("objective failed at perturbed coordinate " + std::to_string(index) +
                           ": " + what),
        index_(index) {}
  std::size_t index() const noexcept { return index_; }

private:
  std::size_t index_;
};

/// Compare the objective's gradient to central differences. With `indices`
/// empty every coordinate is checked.
GradCheckResult finite_difference_check(const Objective& f, std::span<const double> theta0,
                                        double h = 1e-5,
                                        std::span<const std::size_t> indices = {});

}  // namespace flowgrad::ad
