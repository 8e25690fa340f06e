#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace flowgrad {

/// Dense row-major array of doubles with an explicit shape.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> values;

  Tensor() = default;
  /// One-dimensional tensor holding `v`.
  explicit Tensor(std::vector<double> v);
  Tensor(std::vector<std::size_t> shape, std::vector<double> v);

  static Tensor scalar(double x) { return Tensor({1}, {x}); }
  static Tensor zeros(std::vector<std::size_t> shape);

  std::size_t size() const noexcept { return values.size(); }
  bool empty() const noexcept { return values.empty() && shape.empty(); }
  bool is_scalar() const noexcept { return shape.size() == 1 && shape[0] == 1; }
  double item() const;

  std::span<const double> view() const noexcept { return values; }
  std::span<double> view() noexcept { return values; }
};

std::size_t shape_product(std::span<const std::size_t> shape);
bool all_finite(std::span<const double> v);

}  // namespace flowgrad
