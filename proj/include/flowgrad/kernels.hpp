#pragma once

// Data-parallel inner loops. Each kernel has a serial reference in
// kernels::serial and an OpenMP version in kernels::omp. The OpenMP versions
// compute per-element/per-row results in parallel and reduce in a fixed order,
// so they are bit-identical to the serial ones for any thread count.

#include <array>
#include <cstddef>
#include <span>

#include "flowgrad/sparse.hpp"

namespace flowgrad::kernels {

/// Thread cap for the OpenMP kernels. Reads FLOWGRAD_THREADS once; defaults
/// to the OpenMP runtime's maximum.
int max_threads();
void set_max_threads(int n);

/// Element matrix contribution that is linear in one nodal field:
/// K^e_ab += sum_c field[node_c] * weights[c*16 + a*4 + b].
/// a indexes the test function (row), b the trial function (column).
struct ElementTerm {
  std::size_t field = 0;
  std::array<double, 64> weights{};
};

/// Connectivity of a structured quad mesh: 4 nodes per element and the 16
/// value slots (row-major a*4+b) of each element matrix in a CSR pattern.
struct ElementLayout {
  std::size_t n_elements = 0;
  std::span<const std::size_t> element_nodes;
  std::span<const std::size_t> element_slots;
};

/// Dense layer y[p,o] = sum_i x[p,i] W[i,o] + b[o].
struct DenseShape {
  std::size_t points = 0;
  std::size_t in = 0;
  std::size_t out = 0;
};

namespace serial {

void assemble(const ElementLayout& layout, std::span<const ElementTerm> terms,
              std::span<const std::span<const double>> fields, std::span<double> values);
/// Accumulates (+=) into grad_fields.
void assemble_adjoint(const ElementLayout& layout, std::span<const ElementTerm> terms,
                      std::span<const double> grad_values,
                      std::span<const std::span<double>> grad_fields);

void spmv(const sparse::SparsityPattern& p, std::span<const double> values,
          std::span<const double> x, std::span<double> y);
void spmv_transpose(const sparse::SparsityPattern& p, std::span<const double> values,
                    std::span<const double> x, std::span<double> y);

void dense_forward(DenseShape s, std::span<const double> x, std::span<const double> w,
                   std::span<const double> b, std::span<double> y);
/// Overwrites gx, gw, gb. gx may be empty to skip the input gradient.
void dense_backward(DenseShape s, std::span<const double> x, std::span<const double> w,
                    std::span<const double> gy, std::span<double> gx, std::span<double> gw,
                    std::span<double> gb);

}  // namespace serial

namespace omp {

void assemble(const ElementLayout& layout, std::span<const ElementTerm> terms,
              std::span<const std::span<const double>> fields, std::span<double> values);
void assemble_adjoint(const ElementLayout& layout, std::span<const ElementTerm> terms,
                      std::span<const double> grad_values,
                      std::span<const std::span<double>> grad_fields);
void spmv(const sparse::SparsityPattern& p, std::span<const double> values,
          std::span<const double> x, std::span<double> y);
void dense_forward(DenseShape s, std::span<const double> x, std::span<const double> w,
                   std::span<const double> b, std::span<double> y);
void dense_backward(DenseShape s, std::span<const double> x, std::span<const double> w,
                    std::span<const double> gy, std::span<double> gx, std::span<double> gw,
                    std::span<double> gb);

}  // namespace omp

// Production entry points.
using omp::assemble;
using omp::assemble_adjoint;
using omp::dense_backward;
using omp::dense_forward;
using omp::spmv;

}  // namespace flowgrad::kernels
