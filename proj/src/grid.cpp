#include "flowgrad/grid.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <memory>
#include <ostream>
#include <sstream>
#include <string>

#include "flowgrad/errors.hpp"

namespace flowgrad::fem {

namespace {
constexpr std::array<double, 4> kNodeXi{-1.0, 1.0, 1.0, -1.0};
constexpr std::array<double, 4> kNodeEta{-1.0, -1.0, 1.0, 1.0};
}  // namespace

std::array<double, 4> QuadraturePointSet::shape_at(double xi, double eta) {
  std::array<double, 4> n;
  for (std::size_t a = 0; a < 4; ++a) n[a] = 0.25 * (1 + kNodeXi[a] * xi) * (1 + kNodeEta[a] * eta);
  return n;
}

const QuadraturePointSet& QuadraturePointSet::gauss2x2() {
  static const QuadraturePointSet rule = [] {
    QuadraturePointSet q;
    const double g = 1.0 / std::sqrt(3.0);
    const std::array<double, 4> qx{-g, g, g, -g};
    const std::array<double, 4> qy{-g, -g, g, g};
    for (std::size_t k = 0; k < 4; ++k) {
      auto& p = q.points[k];
      p.xi = qx[k];
      p.eta = qy[k];
      p.weight = 1.0;
      p.shape = shape_at(p.xi, p.eta);
      for (std::size_t a = 0; a < 4; ++a) {
        p.dshape_dxi[a] = 0.25 * kNodeXi[a] * (1 + kNodeEta[a] * p.eta);
        p.dshape_deta[a] = 0.25 * kNodeEta[a] * (1 + kNodeXi[a] * p.xi);
      }
    }
    return q;
  }();
  return rule;
}

StructuredGrid::StructuredGrid(std::size_t nx, std::size_t ny) : nx_(nx), ny_(ny) {
  if (nx < 2 || ny < 2) throw ContractError("grid needs at least 2 nodes per axis");
  hx_ = 1.0 / static_cast<double>(nx - 1);
  hy_ = 1.0 / static_cast<double>(ny - 1);
  for (std::size_t j = 0; j < ny; ++j) {
    left_.push_back(node(0, j));
    right_.push_back(node(nx - 1, j));
  }
  for (std::size_t i = 0; i < nx; ++i) {
    bottom_.push_back(node(i, 0));
    top_.push_back(node(i, ny - 1));
  }
  for (const auto* edge : {&left_, &right_, &bottom_, &top_})
    boundary_.insert(boundary_.end(), edge->begin(), edge->end());
  std::sort(boundary_.begin(), boundary_.end());
  boundary_.erase(std::unique(boundary_.begin(), boundary_.end()), boundary_.end());

  auto p = std::make_shared<sparse::SparsityPattern>();
  p->n_rows = p->n_cols = num_nodes();
  p->row_offsets.push_back(0);
  for (std::size_t j = 0; j < ny; ++j) {
    for (std::size_t i = 0; i < nx; ++i) {
      for (std::size_t jj = (j > 0 ? j - 1 : 0); jj <= std::min(ny - 1, j + 1); ++jj)
        for (std::size_t ii = (i > 0 ? i - 1 : 0); ii <= std::min(nx - 1, i + 1); ++ii)
          p->col_indices.push_back(node(ii, jj));
      p->row_offsets.push_back(p->col_indices.size());
    }
  }
  pattern_ = p;

  elem_nodes_.reserve(4 * num_elements());
  elem_slots_.reserve(16 * num_elements());
  for (std::size_t e = 0; e < num_elements(); ++e) {
    const auto nodes = element_nodes(e);
    elem_nodes_.insert(elem_nodes_.end(), nodes.begin(), nodes.end());
    for (std::size_t a = 0; a < 4; ++a)
      for (std::size_t b = 0; b < 4; ++b) elem_slots_.push_back(p->find(nodes[a], nodes[b]));
  }
}

Point StructuredGrid::coord(std::size_t n) const noexcept {
  return {static_cast<double>(n % nx_) * hx_, static_cast<double>(n / nx_) * hy_};
}

std::vector<Point> StructuredGrid::coords() const {
  std::vector<Point> c(num_nodes());
  for (std::size_t n = 0; n < c.size(); ++n) c[n] = coord(n);
  return c;
}

std::array<std::size_t, 4> StructuredGrid::element_nodes(std::size_t e) const {
  const std::size_t i = e % (nx_ - 1), j = e / (nx_ - 1);
  return {node(i, j), node(i + 1, j), node(i + 1, j + 1), node(i, j + 1)};
}

NodalField::NodalField(const StructuredGrid& g, std::vector<double> v)
    : grid(&g), values(std::move(v)) {
  if (values.size() != g.num_nodes()) throw ContractError("nodal field size != node count");
}

void write_csv(std::ostream& os, const NodalField& field) {
  os << "x,y,value\n" << std::setprecision(17);
  for (std::size_t n = 0; n < field.values.size(); ++n) {
    const Point p = field.grid->coord(n);
    os << p.x << ',' << p.y << ',' << field.values[n] << '\n';
  }
}

NodalField read_csv(std::istream& is, const StructuredGrid& grid) {
  std::string line;
  if (!std::getline(is, line) || line != "x,y,value") throw ContractError("bad CSV header");
  std::vector<double> values;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto last = line.rfind(',');
    if (last == std::string::npos) throw ContractError("bad CSV row: " + line);
    values.push_back(std::stod(line.substr(last + 1)));
  }
  return NodalField(grid, std::move(values));
}

namespace {

struct InterpStencil {
  std::vector<std::size_t> nodes;  // 4 per point
  std::vector<double> weights;
};

// Points on element edges land on exactly +-1 so nodal values come back unchanged.
double snap(double r) {
  if (std::abs(r - 1.0) < 1e-12) return 1.0;
  if (std::abs(r + 1.0) < 1e-12) return -1.0;
  return r;
}

InterpStencil stencil(const StructuredGrid& g, std::span<const Point> points) {
  InterpStencil s;
  for (const Point& p : points) {
    if (!(p.x >= 0.0 && p.x <= 1.0 && p.y >= 0.0 && p.y <= 1.0))
      throw ContractError("interpolation point outside the unit square");
    const std::size_t i = std::min(static_cast<std::size_t>(p.x / g.hx()), g.nx() - 2);
    const std::size_t j = std::min(static_cast<std::size_t>(p.y / g.hy()), g.ny() - 2);
    const double xi = snap(2.0 * (p.x - static_cast<double>(i) * g.hx()) / g.hx() - 1.0);
    const double eta = snap(2.0 * (p.y - static_cast<double>(j) * g.hy()) / g.hy() - 1.0);
    const auto n = QuadraturePointSet::shape_at(xi, eta);
    const auto nodes = g.element_nodes(j * (g.nx() - 1) + i);
    s.nodes.insert(s.nodes.end(), nodes.begin(), nodes.end());
    s.weights.insert(s.weights.end(), n.begin(), n.end());
  }
  return s;
}

ad::OpId interp_op() {
  static const ad::OpId id = ad::OpRegistry::global().add(ad::CustomOpDef{
      "interpolate",
      [](ad::InputValues in, std::any& ctx) {
        const auto& s = *std::any_cast<std::shared_ptr<const InterpStencil>>(ctx);
        std::vector<double> v(s.nodes.size() / 4, 0.0);
        for (std::size_t k = 0; k < s.nodes.size(); ++k) {
          if (s.nodes[k] >= in[0]->size()) throw ContractError("interpolate: field too short");
          v[k / 4] += s.weights[k] * in[0]->values[s.nodes[k]];
        }
        return Tensor(std::move(v));
      },
      [](const Tensor& g, ad::InputValues in, const Tensor&, const std::any& ctx) {
        const auto& s = *std::any_cast<std::shared_ptr<const InterpStencil>>(ctx);
        std::vector<double> gf(in[0]->size(), 0.0);
        for (std::size_t k = 0; k < s.nodes.size(); ++k)
          gf[s.nodes[k]] += s.weights[k] * g.values[k / 4];
        return std::vector<Tensor>{Tensor(in[0]->shape, std::move(gf))};
      }});
  return id;
}

}  // namespace

std::vector<double> interpolate_at_points(const NodalField& field, std::span<const Point> points) {
  const auto s = stencil(*field.grid, points);
  std::vector<double> v(points.size(), 0.0);
  for (std::size_t k = 0; k < s.nodes.size(); ++k) v[k / 4] += s.weights[k] * field.values[s.nodes[k]];
  return v;
}

ad::NodeId interpolate_at_points(ad::Tape& t, const StructuredGrid& grid, ad::NodeId field,
                                 std::span<const Point> points) {
  auto s = std::make_shared<const InterpStencil>(stencil(grid, points));
  return t.apply(interp_op(), {field}, s);
}

}  // namespace flowgrad::fem
