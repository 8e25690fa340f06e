#include <doctest.h>

#include "flowgrad/grid.hpp"
#include "flowgrad/kernels.hpp"
#include "test_util.hpp"

using namespace flowgrad;
using testutil::random_vector;

namespace {

struct Setup {
  fem::StructuredGrid grid{23, 17};
  std::vector<kernels::ElementTerm> terms;
  std::vector<std::vector<double>> fields;

  Setup() {
    for (std::size_t f = 0; f < 3; ++f) {
      kernels::ElementTerm term;
      term.field = f;
      const auto w = random_vector(64, 10 + f);
      std::copy(w.begin(), w.end(), term.weights.begin());
      terms.push_back(term);
      fields.push_back(random_vector(grid.num_nodes(), 20 + f));
    }
  }
  kernels::ElementLayout layout() const {
    return {grid.num_elements(), grid.element_node_table(), grid.element_slot_table()};
  }
};

}  // namespace

TEST_CASE("OpenMP kernels are bit-identical to the serial reference") {
  Setup s;
  const auto nnz = s.grid.node_pattern()->nnz();
  const std::vector<std::span<const double>> fields{s.fields[0], s.fields[1], s.fields[2]};
  const auto gv = random_vector(nnz, 30);
  const auto x = random_vector(s.grid.num_nodes(), 31);
  const kernels::DenseShape shape{s.grid.num_nodes(), 20, 20};
  const auto dx = random_vector(shape.points * shape.in, 32);
  const auto dw = random_vector(shape.in * shape.out, 33);
  const auto db = random_vector(shape.out, 34);
  const auto dgy = random_vector(shape.points * shape.out, 35);

  std::vector<double> ref_vals(nnz, 0.0);
  kernels::serial::assemble(s.layout(), s.terms, fields, ref_vals);
  std::vector<std::vector<double>> ref_grads(3, std::vector<double>(s.grid.num_nodes(), 0.0));
  {
    std::vector<std::span<double>> g{ref_grads[0], ref_grads[1], ref_grads[2]};
    kernels::serial::assemble_adjoint(s.layout(), s.terms, gv, g);
  }
  std::vector<double> ref_y(s.grid.num_nodes());
  kernels::serial::spmv(*s.grid.node_pattern(), gv, x, ref_y);
  std::vector<double> ref_dy(shape.points * shape.out);
  kernels::serial::dense_forward(shape, dx, dw, db, ref_dy);
  std::vector<double> ref_gx(dx.size()), ref_gw(dw.size()), ref_gb(db.size());
  kernels::serial::dense_backward(shape, dx, dw, dgy, ref_gx, ref_gw, ref_gb);

  const int saved = kernels::max_threads();
  for (int threads : {1, 2, 3, 8}) {
    CAPTURE(threads);
    kernels::set_max_threads(threads);
    std::vector<double> vals(nnz, 0.0);
    kernels::omp::assemble(s.layout(), s.terms, fields, vals);
    CHECK(vals == ref_vals);

    std::vector<std::vector<double>> grads(3, std::vector<double>(s.grid.num_nodes(), 0.0));
    std::vector<std::span<double>> g{grads[0], grads[1], grads[2]};
    kernels::omp::assemble_adjoint(s.layout(), s.terms, gv, g);
    CHECK(grads == ref_grads);

    std::vector<double> y(s.grid.num_nodes());
    kernels::omp::spmv(*s.grid.node_pattern(), gv, x, y);
    CHECK(y == ref_y);

    std::vector<double> dy(ref_dy.size());
    kernels::omp::dense_forward(shape, dx, dw, db, dy);
    CHECK(dy == ref_dy);
    std::vector<double> gx(dx.size()), gw(dw.size()), gb(db.size());
    kernels::omp::dense_backward(shape, dx, dw, dgy, gx, gw, gb);
    CHECK(gx == ref_gx);
    CHECK(gw == ref_gw);
    CHECK(gb == ref_gb);
  }
  kernels::set_max_threads(saved);
}

TEST_CASE("assemble_adjoint accumulates into existing gradients") {
  Setup s;
  const auto gv = random_vector(s.grid.node_pattern()->nnz(), 40);
  std::vector<double> g1(s.grid.num_nodes(), 0.0), g2(s.grid.num_nodes(), 1.0);
  std::vector<std::span<double>> a{g1}, b{g2};
  std::vector<kernels::ElementTerm> one{s.terms[0]};
  kernels::serial::assemble_adjoint(s.layout(), one, gv, a);
  kernels::serial::assemble_adjoint(s.layout(), one, gv, b);
  for (std::size_t i = 0; i < g1.size(); ++i) CHECK(g2[i] == doctest::Approx(g1[i] + 1.0));
}
