#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "flowgrad/tape.hpp"

// Elementary differentiable operators on dense tensors.
namespace flowgrad::ops {

using ad::NodeId;
using ad::Tape;

NodeId add(Tape& t, NodeId a, NodeId b);
NodeId sub(Tape& t, NodeId a, NodeId b);
NodeId mul(Tape& t, NodeId a, NodeId b);
NodeId scale(Tape& t, NodeId a, double c);
NodeId add_scalar(Tape& t, NodeId a, double c);
NodeId sum(Tape& t, NodeId a);
NodeId dot(Tape& t, NodeId a, NodeId b);
/// A has shape {m, n}; x has n values. Returns A x with shape {m}.
NodeId matmul(Tape& t, NodeId a, NodeId x);
NodeId tanh(Tape& t, NodeId a);

/// y = x W + b with x of shape {points, in}. W (in*out, row-major) and b (out)
/// are read from `params` starting at `offset`.
NodeId linear(Tape& t, NodeId x, NodeId params, std::size_t offset, std::size_t in,
              std::size_t out);

/// max(a, floor). The gradient is zero where the floor is active. The number of
/// clamped entries is written to `clamped` when non-null.
NodeId clamp_min(Tape& t, NodeId a, double floor, std::size_t* clamped = nullptr);

/// out[k] = a[indices[k]]
NodeId gather(Tape& t, NodeId a, std::vector<std::size_t> indices);
/// out[k] = a[start + k*stride], k < count
NodeId strided(Tape& t, NodeId a, std::size_t start, std::size_t stride, std::size_t count);
/// Copy of a with the listed entries set to zero.
NodeId zero_entries(Tape& t, NodeId a, std::vector<std::size_t> indices);
NodeId concat(Tape& t, std::span<const NodeId> parts);

/// sum_k (pred[k] - target[k])^2 with a constant target.
NodeId squared_error(Tape& t, NodeId pred, std::vector<double> target);

}  // namespace flowgrad::ops
