#include "flowgrad/tape.hpp"

#include <cmath>
#include <deque>
#include <mutex>

#include "flowgrad/errors.hpp"

namespace flowgrad::ad {

struct OpRegistry::Impl {
  mutable std::mutex mutex;
  std::deque<CustomOpDef> ops;
};

OpRegistry& OpRegistry::global() {
  static OpRegistry registry;
  return registry;
}

OpRegistry::Impl& OpRegistry::impl() const {
  static Impl instance;
  return instance;
}

OpId OpRegistry::add(CustomOpDef def) {
  auto& s = impl();
  std::lock_guard lock(s.mutex);
  for (std::size_t i = 0; i < s.ops.size(); ++i)
    if (s.ops[i].name == def.name) throw GraphError("operator registered twice: " + def.name);
  s.ops.push_back(std::move(def));
  return OpId{s.ops.size() - 1};
}

OpId OpRegistry::find(const std::string& name) const {
  auto& s = impl();
  std::lock_guard lock(s.mutex);
  for (std::size_t i = 0; i < s.ops.size(); ++i)
    if (s.ops[i].name == name) return OpId{i};
  throw GraphError("unknown operator: " + name);
}

const CustomOpDef& OpRegistry::get(OpId id) const {
  auto& s = impl();
  std::lock_guard lock(s.mutex);
  if (id.index >= s.ops.size()) throw GraphError("operator id out of range");
  return s.ops[id.index];
}

void OpRegistry::replace_backward(const std::string& name,
                                  decltype(CustomOpDef::backward) backward) {
  auto& s = impl();
  std::lock_guard lock(s.mutex);
  for (auto& op : s.ops) {
    if (op.name == name) {
      op.backward = std::move(backward);
      return;
    }
  }
  throw GraphError("unknown operator: " + name);
}

NodeId Tape::variable(Tensor value) {
  nodes_.push_back(Node{OpId{}, true, true, {}, std::move(value), {}});
  return NodeId{nodes_.size() - 1};
}

NodeId Tape::constant(Tensor value) {
  nodes_.push_back(Node{OpId{}, true, false, {}, std::move(value), {}});
  return NodeId{nodes_.size() - 1};
}

void Tape::check(NodeId id) const {
  if (id.index >= nodes_.size())
    throw GraphError("node reference " + std::to_string(id.index) + " is not on the tape");
}

NodeId Tape::record(OpId op, std::vector<NodeId> inputs, Tensor output, std::any context) {
  for (NodeId in : inputs) check(in);
  nodes_.push_back(Node{op, false, false, std::move(inputs), std::move(output), std::move(context)});
  return NodeId{nodes_.size() - 1};
}

NodeId Tape::apply(OpId op, std::vector<NodeId> inputs, std::any context) {
  for (NodeId in : inputs) check(in);
  const CustomOpDef& def = OpRegistry::global().get(op);
  std::vector<const Tensor*> values;
  values.reserve(inputs.size());
  for (NodeId in : inputs) values.push_back(&nodes_[in.index].output);
  Tensor out = def.forward(values, context);
  if (!all_finite(out.values)) throw NumericError(def.name, "non-finite forward output");
  return record(op, std::move(inputs), std::move(out), std::move(context));
}

const Tensor& Tape::value(NodeId id) const {
  check(id);
  return nodes_[id.index].output;
}

bool Tape::is_variable(NodeId id) const {
  check(id);
  return nodes_[id.index].trainable;
}

std::vector<NodeId> Tape::variables() const {
  std::vector<NodeId> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    if (nodes_[i].trainable) out.push_back(NodeId{i});
  return out;
}

GradientMap Tape::backward(NodeId loss) const {
  check(loss);
  if (!nodes_[loss.index].output.is_scalar())
    throw ContractError("backward: loss node must have shape [1]");

  std::vector<Tensor> grads(loss.index + 1);
  grads[loss.index] = Tensor::scalar(1.0);

  std::vector<const Tensor*> inputs;
  for (std::size_t i = loss.index + 1; i-- > 0;) {
    const Node& node = nodes_[i];
    if (node.leaf || grads[i].values.empty()) continue;
    const CustomOpDef& def = OpRegistry::global().get(node.op);
    inputs.clear();
    for (NodeId in : node.inputs) inputs.push_back(&nodes_[in.index].output);
    std::vector<Tensor> in_grads = def.backward(grads[i], inputs, node.output, node.context);
    if (in_grads.size() != node.inputs.size())
      throw GraphError(def.name + ": backward returned wrong number of gradients");
    for (std::size_t k = 0; k < in_grads.size(); ++k) {
      Tensor& g = in_grads[k];
      if (g.values.empty()) continue;
      const std::size_t target = node.inputs[k].index;
      if (g.values.size() != nodes_[target].output.values.size())
        throw GraphError(def.name + ": gradient shape mismatch for input " + std::to_string(k));
      if (!all_finite(g.values)) throw NumericError(def.name, "non-finite gradient");
      Tensor& acc = grads[target];
      if (acc.values.empty()) {
        acc.shape = nodes_[target].output.shape;
        acc.values = std::move(g.values);
      } else {
        for (std::size_t j = 0; j < acc.values.size(); ++j) acc.values[j] += g.values[j];
      }
    }
    // Intermediate gradients are dead once propagated.
    if (!nodes_[i].trainable) std::vector<double>().swap(grads[i].values);
  }

  GradientMap out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (!nodes_[i].trainable) continue;
    if (i <= loss.index && !grads[i].values.empty())
      out.emplace(NodeId{i}, std::move(grads[i]));
    else
      out.emplace(NodeId{i}, Tensor::zeros(nodes_[i].output.shape));
  }
  return out;
}

GradCheckResult finite_difference_check(const Objective& f, std::span<const double> theta0,
                                        double h, std::span<const std::size_t> indices) {
  std::vector<std::size_t> coords(indices.begin(), indices.end());
  if (coords.empty())
    for (std::size_t i = 0; i < theta0.size(); ++i) coords.push_back(i);

  GradCheckResult result;
  std::vector<double> grad;
  f(theta0, &grad);
  if (grad.size() != theta0.size()) throw ContractError("objective gradient has wrong length");

  std::vector<double> theta(theta0.begin(), theta0.end());
  for (std::size_t i : coords) {
    if (i >= theta.size()) throw ContractError("gradient-check index out of range");
    double fp = 0.0, fm = 0.0;
    try {
      theta[i] = theta0[i] + h;
      fp = f(theta, nullptr);
      theta[i] = theta0[i] - h;
      fm = f(theta, nullptr);
    } catch (const std::exception& e) {
      throw PerturbationError(i, e.what());
    }
    theta[i] = theta0[i];
    const double fd = (fp - fm) / (2.0 * h);
    const double rel = std::abs(grad[i] - fd) / (std::abs(fd) + 1e-12);
    result.ad_gradient.push_back(grad[i]);
    result.fd_gradient.push_back(fd);
    if (result.ad_gradient.size() == 1 || rel > result.max_relative_error) {
      result.max_relative_error = rel;
      result.worst_index = i;
    }
  }
  return result;
}

}  // namespace flowgrad::ad
