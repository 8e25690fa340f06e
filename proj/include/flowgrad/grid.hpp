#pragma once

#include <array>
#include <cstddef>
#include <iosfwd>
#include <span>
#include <vector>

#include "flowgrad/sparse.hpp"
#include "flowgrad/tape.hpp"

namespace flowgrad::fem {

struct Point {
  double x = 0.0;
  double y = 0.0;
};

/// 2x2 Gauss rule on the reference square [-1,1]^2 with bilinear shape
/// functions. Local node order is counterclockwise from (-1,-1).
struct QuadraturePointSet {
  struct QPoint {
    double xi, eta, weight;
    std::array<double, 4> shape;
    std::array<double, 4> dshape_dxi;
    std::array<double, 4> dshape_deta;
  };
  std::array<QPoint, 4> points;

  static const QuadraturePointSet& gauss2x2();
  static std::array<double, 4> shape_at(double xi, double eta);
};

/// Uniform bilinear quad mesh of the unit square. Node (i, j) sits at
/// (i*hx, j*hy) with index j*nx + i.
class StructuredGrid {
public:
  StructuredGrid(std::size_t nx, std::size_t ny);

  std::size_t nx() const noexcept { return nx_; }
  std::size_t ny() const noexcept { return ny_; }
  std::size_t num_nodes() const noexcept { return nx_ * ny_; }
  std::size_t num_elements() const noexcept { return (nx_ - 1) * (ny_ - 1); }
  double hx() const noexcept { return hx_; }
  double hy() const noexcept { return hy_; }

  std::size_t node(std::size_t i, std::size_t j) const noexcept { return j * nx_ + i; }
  Point coord(std::size_t node) const noexcept;
  std::vector<Point> coords() const;
  std::array<std::size_t, 4> element_nodes(std::size_t e) const;

  const std::vector<std::size_t>& left() const noexcept { return left_; }
  const std::vector<std::size_t>& right() const noexcept { return right_; }
  const std::vector<std::size_t>& bottom() const noexcept { return bottom_; }
  const std::vector<std::size_t>& top() const noexcept { return top_; }
  /// Sorted union of the four edges.
  const std::vector<std::size_t>& boundary() const noexcept { return boundary_; }

  /// 9-point node-to-node CSR pattern.
  const sparse::PatternPtr& node_pattern() const noexcept { return pattern_; }
  /// Connectivity and CSR slots for the assembly kernels.
  std::span<const std::size_t> element_node_table() const noexcept { return elem_nodes_; }
  std::span<const std::size_t> element_slot_table() const noexcept { return elem_slots_; }

private:
  std::size_t nx_, ny_;
  double hx_, hy_;
  std::vector<std::size_t> left_, right_, bottom_, top_, boundary_;
  sparse::PatternPtr pattern_;
  std::vector<std::size_t> elem_nodes_;
  std::vector<std::size_t> elem_slots_;
};

struct NodalField {
  const StructuredGrid* grid = nullptr;
  std::vector<double> values;

  NodalField() = default;
  NodalField(const StructuredGrid& g, std::vector<double> v);
};

/// CSV with header `x,y,value`, one row per node in index order, 17 significant digits.
void write_csv(std::ostream& os, const NodalField& field);
/// Reads the values column back; node count must match the grid.
NodalField read_csv(std::istream& is, const StructuredGrid& grid);

/// Bilinear interpolation inside the containing element.
std::vector<double> interpolate_at_points(const NodalField& field, std::span<const Point> points);
/// Differentiable version on a nodal tensor.
ad::NodeId interpolate_at_points(ad::Tape& t, const StructuredGrid& grid, ad::NodeId field,
                                 std::span<const Point> points);

}  // namespace flowgrad::fem
