#include <omp.h>

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <string>
#include <vector>

#include "flowgrad/kernels.hpp"

namespace flowgrad::kernels {

namespace {

std::atomic<int>& thread_cap() {
  static std::atomic<int> cap = [] {
    int n = omp_get_max_threads();
    if (const char* env = std::getenv("FLOWGRAD_THREADS")) {
      try {
        const int v = std::stoi(env);
        if (v > 0) n = v;
      } catch (...) {
      }
    }
    return n;
  }();
  return cap;
}

}  // namespace

int max_threads() { return thread_cap().load(); }
void set_max_threads(int n) { thread_cap().store(std::max(1, n)); }

namespace omp {

void assemble(const ElementLayout& layout, std::span<const ElementTerm> terms,
              std::span<const std::span<const double>> fields, std::span<double> values) {
  const auto n_el = static_cast<std::ptrdiff_t>(layout.n_elements);
  std::vector<double> local(16 * layout.n_elements, 0.0);
#pragma omp parallel for num_threads(max_threads()) schedule(static)
  for (std::ptrdiff_t e = 0; e < n_el; ++e) {
    const std::size_t* nodes = &layout.element_nodes[4 * e];
    double* out = &local[16 * e];
    for (const auto& term : terms) {
      const auto& f = fields[term.field];
      for (std::size_t c = 0; c < 4; ++c) {
        const double fc = f[nodes[c]];
        for (std::size_t ab = 0; ab < 16; ++ab) out[ab] += fc * term.weights[c * 16 + ab];
      }
    }
  }
  std::fill(values.begin(), values.end(), 0.0);
  for (std::size_t e = 0; e < layout.n_elements; ++e)
    for (std::size_t ab = 0; ab < 16; ++ab)
      values[layout.element_slots[16 * e + ab]] += local[16 * e + ab];
}

void assemble_adjoint(const ElementLayout& layout, std::span<const ElementTerm> terms,
                      std::span<const double> grad_values,
                      std::span<const std::span<double>> grad_fields) {
  const std::size_t per = 4 * terms.size();
  const auto n_el = static_cast<std::ptrdiff_t>(layout.n_elements);
  std::vector<double> local(per * layout.n_elements);
#pragma omp parallel for num_threads(max_threads()) schedule(static)
  for (std::ptrdiff_t e = 0; e < n_el; ++e) {
    const std::size_t* slots = &layout.element_slots[16 * e];
    double g[16];
    for (std::size_t ab = 0; ab < 16; ++ab) g[ab] = grad_values[slots[ab]];
    for (std::size_t t = 0; t < terms.size(); ++t) {
      for (std::size_t c = 0; c < 4; ++c) {
        double s = 0.0;
        for (std::size_t ab = 0; ab < 16; ++ab) s += g[ab] * terms[t].weights[c * 16 + ab];
        local[per * e + 4 * t + c] = s;
      }
    }
  }
  for (std::size_t e = 0; e < layout.n_elements; ++e) {
    const std::size_t* nodes = &layout.element_nodes[4 * e];
    for (std::size_t t = 0; t < terms.size(); ++t)
      for (std::size_t c = 0; c < 4; ++c)
        grad_fields[terms[t].field][nodes[c]] += local[per * e + 4 * t + c];
  }
}

void spmv(const sparse::SparsityPattern& p, std::span<const double> values,
          std::span<const double> x, std::span<double> y) {
  const auto n = static_cast<std::ptrdiff_t>(p.n_rows);
#pragma omp parallel for num_threads(max_threads()) schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t k = p.row_offsets[i]; k < p.row_offsets[i + 1]; ++k)
      s += values[k] * x[p.col_indices[k]];
    y[i] = s;
  }
}

void dense_forward(DenseShape s, std::span<const double> x, std::span<const double> w,
                   std::span<const double> b, std::span<double> y) {
  const auto np = static_cast<std::ptrdiff_t>(s.points);
#pragma omp parallel for num_threads(max_threads()) schedule(static)
  for (std::ptrdiff_t p = 0; p < np; ++p) {
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
  const auto nw = static_cast<std::ptrdiff_t>(s.in * s.out);
#pragma omp parallel for num_threads(max_threads()) schedule(static)
  for (std::ptrdiff_t io = 0; io < nw; ++io) {
    const std::size_t i = static_cast<std::size_t>(io) / s.out;
    const std::size_t o = static_cast<std::size_t>(io) % s.out;
    double acc = 0.0;
    for (std::size_t p = 0; p < s.points; ++p) acc += x[p * s.in + i] * gy[p * s.out + o];
    gw[io] = acc;
  }
  for (std::size_t o = 0; o < s.out; ++o) {
    double acc = 0.0;
    for (std::size_t p = 0; p < s.points; ++p) acc += gy[p * s.out + o];
    gb[o] = acc;
  }
  if (gx.empty()) return;
  const auto np = static_cast<std::ptrdiff_t>(s.points);
#pragma omp parallel for num_threads(max_threads()) schedule(static)
  for (std::ptrdiff_t p = 0; p < np; ++p) {
    for (std::size_t i = 0; i < s.in; ++i) {
      double acc = 0.0;
      for (std::size_t o = 0; o < s.out; ++o) acc += w[i * s.out + o] * gy[p * s.out + o];
      gx[p * s.in + i] = acc;
    }
  }
}

}  // namespace omp
}  // namespace flowgrad::kernels
