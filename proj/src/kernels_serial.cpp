#include "flowgrad/kernels.hpp"

#include <algorithm>

namespace flowgrad::kernels::serial {

void assemble(const ElementLayout& layout, std::span<const ElementTerm> terms,
              std::span<const std::span<const double>> fields, std::span<double> values) {
  std::fill(values.begin(), values.end(), 0.0);
  for (std::size_t e = 0; e < layout.n_elements; ++e) {
    const std::size_t* nodes = &layout.element_nodes[4 * e];
    const std::size_t* slots = &layout.element_slots[16 * e];
    std::array<double, 16> local{};
    for (const auto& term : terms) {
      const auto& f = fields[term.field];
      for (std::size_t c = 0; c < 4; ++c) {
        const double fc = f[nodes[c]];
        for (std::size_t ab = 0; ab < 16; ++ab) local[ab] += fc * term.weights[c * 16 + ab];
      }
    }
    for (std::size_t ab = 0; ab < 16; ++ab) values[slots[ab]] += local[ab];
  }
}

void assemble_adjoint(const ElementLayout& layout, std::span<const ElementTerm> terms,
                      std::span<const double> grad_values,
                      std::span<const std::span<double>> grad_fields) {
  for (std::size_t e = 0; e < layout.n_elements; ++e) {
    const std::size_t* nodes = &layout.element_nodes[4 * e];
    const std::size_t* slots = &layout.element_slots[16 * e];
    std::array<double, 16> g;
    for (std::size_t ab = 0; ab < 16; ++ab) g[ab] = grad_values[slots[ab]];
    for (const auto& term : terms) {
      for (std::size_t c = 0; c < 4; ++c) {
        double s = 0.0;
        for (std::size_t ab = 0; ab < 16; ++ab) s += g[ab] * term.weights[c * 16 + ab];
        grad_fields[term.field][nodes[c]] += s;
      }
    }
  }
}

void spmv(const sparse::SparsityPattern& p, std::span<const double> values,
          std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < p.n_rows; ++i) {
    double s = 0.0;
    for (std::size_t k = p.row_offsets[i]; k < p.row_offsets[i + 1]; ++k)
      s += values[k] * x[p.col_indices[k]];
    y[i] = s;
  }
}

void spmv_transpose(const sparse::SparsityPattern& p, std::span<const double> values,
                    std::span<const double> x, std::span<double> y) {
  std::fill(y.begin(), y.end(), 0.0);
  for (std::size_t i = 0; i < p.n_rows; ++i)
    for (std::size_t k = p.row_offsets[i]; k < p.row_offsets[i + 1]; ++k)
      y[p.col_indices[k]] += values[k] * x[i];
}

void dense_forward(DenseShape s, std::span<const double> x, std::span<const double> w,
                   std::span<const double> b, std::span<double> y) {
  for (std::size_t p = 0; p < s.points; ++p) {
    for (std::size_t o = 0; o < s.out; ++o) {
      double acc = b[o];
      for (std::size_t i = 0; i < s.in; ++i) acc += x[p * s.in + i] * w[i * s.out + o];
      y[p * s.out + o] = acc;
    }
  }
}

void dense_backward(DenseShape s, std::span<const double> x, std::span<const double> w,
                    std::span<const double> gy, std::span<double> gx, std::span<double> gw,
                    std::span<double> gb) {
  for (std::size_t i = 0; i < s.in; ++i) {
    for (std::size_t o = 0; o < s.out; ++o) {
      double acc = 0.0;
      for (std::size_t p = 0; p < s.points; ++p) acc += x[p * s.in + i] * gy[p * s.out + o];
      gw[i * s.out + o] = acc;
    }
  }
  for (std::size_t o = 0; o < s.out; ++o) {
    double acc = 0.0;
    for (std::size_t p = 0; p < s.points; ++p) acc += gy[p * s.out + o];
    gb[o] = acc;
  }
  if (gx.empty()) return;
  for (std::size_t p = 0; p < s.points; ++p) {
    for (std::size_t i = 0; i < s.in; ++i) {
      double acc = 0.0;
      for (std::size_t o = 0; o < s.out; ++o) acc += w[i * s.out + o] * gy[p * s.out + o];
      gx[p * s.in + i] = acc;
    }
  }
}

}  // namespace flowgrad::kernels::serial
