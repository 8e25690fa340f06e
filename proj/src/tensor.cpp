#include "flowgrad/tensor.hpp"

#include <cmath>
#include <numeric>

#include "flowgrad/errors.hpp"

namespace flowgrad {

std::size_t shape_product(std::span<const std::size_t> shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

bool all_finite(std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

Tensor::Tensor(std::vector<double> v) : shape{v.size()}, values(std::move(v)) {}

Tensor::Tensor(std::vector<std::size_t> s, std::vector<double> v)
    : shape(std::move(s)), values(std::move(v)) {
  if (shape_product(shape) != values.size())
    throw ContractError("tensor shape does not match value count");
}

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
  std::vector<double> v(shape_product(shape), 0.0);
  return Tensor(std::move(shape), std::move(v));
}

double Tensor::item() const {
  if (values.size() != 1) throw ContractError("item() on non-scalar tensor");
  return values[0];
}

}  // namespace flowgrad
