#include "flowgrad/ops.hpp"

#include <cmath>

#include "flowgrad/errors.hpp"
#include "flowgrad/kernels.hpp"

namespace flowgrad::ops {

using ad::CustomOpDef;
using ad::InputValues;
using ad::OpId;
using ad::OpRegistry;

namespace {

void require_same_size(const char* op, const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) throw ContractError(std::string(op) + ": size mismatch");
}

Tensor like(const Tensor& t, std::vector<double> v) { return Tensor(t.shape, std::move(v)); }

OpId add_op() {
  static const OpId id = OpRegistry::global().add(CustomOpDef{
      "add",
      [](InputValues in, std::any&) {
        require_same_size("add", *in[0], *in[1]);
        std::vector<double> v(in[0]->size());
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = in[0]->values[i] + in[1]->values[i];
        return like(*in[0], std::move(v));
      },
      [](const Tensor& g, InputValues in, const Tensor&, const std::any&) {
        return std::vector<Tensor>{like(*in[0], g.values), like(*in[1], g.values)};
      }});
  return id;
}

OpId sub_op() {
  static const OpId id = OpRegistry::global().add(CustomOpDef{
      "sub",
      [](InputValues in, std::any&) {
        require_same_size("sub", *in[0], *in[1]);
        std::vector<double> v(in[0]->size());
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = in[0]->values[i] - in[1]->values[i];
        return like(*in[0], std::move(v));
      },
      [](const Tensor& g, InputValues in, const Tensor&, const std::any&) {
        std::vector<double> neg(g.values.size());
        for (std::size_t i = 0; i < neg.size(); ++i) neg[i] = -g.values[i];
        return std::vector<Tensor>{like(*in[0], g.values), like(*in[1], std::move(neg))};
      }});
  return id;
}

OpId mul_op() {
  static const OpId id = OpRegistry::global().add(CustomOpDef{
      "mul",
      [](InputValues in, std::any&) {
        require_same_size("mul", *in[0], *in[1]);
        std::vector<double> v(in[0]->size());
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = in[0]->values[i] * in[1]->values[i];
        return like(*in[0], std::move(v));
      },
      [](const Tensor& g, InputValues in, const Tensor&, const std::any&) {
        std::vector<double> ga(g.size()), gb(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) {
          ga[i] = g.values[i] * in[1]->values[i];
          gb[i] = g.values[i] * in[0]->values[i];
        }
        return std::vector<Tensor>{like(*in[0], std::move(ga)), like(*in[1], std::move(gb))};
      }});
  return id;
}

// context: double
OpId scale_op() {
  static const OpId id = OpRegistry::global().add(CustomOpDef{
      "scale",
      [](InputValues in, std::any& ctx) {
        const double c = std::any_cast<double>(ctx);
        std::vector<double> v(in[0]->values);
        for (double& x : v) x *= c;
        return like(*in[0], std::move(v));
      },
      [](const Tensor& g, InputValues in, const Tensor&, const std::any& ctx) {
        const double c = std::any_cast<double>(ctx);
        std::vector<double> v(g.values);
        for (double& x : v) x *= c;
        return std::vector<Tensor>{like(*in[0], std::move(v))};
      }});
  return id;
}

OpId add_scalar_op() {
  static const OpId id = OpRegistry::global().add(CustomOpDef{
      "add_scalar",
      [](InputValues in, std::any& ctx) {
        const double c = std::any_cast<double>(ctx);
        std::vector<double> v(in[0]->values);
        for (double& x : v) x += c;
        return like(*in[0], std::move(v));
      },
      [](const Tensor& g, InputValues in, const Tensor&, const std::any&) {
        return std::vector<Tensor>{like(*in[0], g.values)};
      }});
  return id;
}

OpId sum_op() {
  static const OpId id = OpRegistry::global().add(CustomOpDef{
      "sum",
      [](InputValues in, std::any&) {
        double s = 0.0;
        for (double x : in[0]->values) s += x;
        return Tensor::scalar(s);
      },
      [](const Tensor& g, InputValues in, const Tensor&, const std::any&) {
        return std::vector<Tensor>{like(*in[0], std::vector<double>(in[0]->size(), g.item()))};
      }});
  return id;
}

OpId dot_op() {
  static const OpId id = OpRegistry::global().add(CustomOpDef{
      "dot",
      [](InputValues in, std::any&) {
        require_same_size("dot", *in[0], *in[1]);
        double s = 0.0;
        for (std::size_t i = 0; i < in[0]->size(); ++i) s += in[0]->values[i] * in[1]->values[i];
        return Tensor::scalar(s);
      },
      [](const Tensor& g, InputValues in, const Tensor&, const std::any&) {
        const double c = g.item();
        std::vector<double> ga(in[0]->size()), gb(in[0]->size());
        for (std::size_t i = 0; i < ga.size(); ++i) {
          ga[i] = c * in[1]->values[i];
          gb[i] = c * in[0]->values[i];
        }
        return std::vector<Tensor>{like(*in[0], std::move(ga)), like(*in[1], std::move(gb))};
      }});
  return id;
}

OpId matmul_op() {
  static const OpId id = OpRegistry::global().add(CustomOpDef{
      "matmul",
      [](InputValues in, std::any&) {
        const Tensor& a = *in[0];
        const Tensor& x = *in[1];
        if (a.shape.size() != 2 || a.shape[1] != x.size())
          throw ContractError("matmul: shape mismatch");
        const std::size_t m = a.shape[0], n = a.shape[1];
        std::vector<double> y(m, 0.0);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) y[i] += a.values[i * n + j] * x.values[j];
        return Tensor(std::move(y));
      },
      [](const Tensor& g, InputValues in, const Tensor&, const std::any&) {
        const Tensor& a = *in[0];
        const Tensor& x = *in[1];
        const std::size_t m = a.shape[0], n = a.shape[1];
        std::vector<double> ga(m * n), gx(n, 0.0);
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) {
            ga[i * n + j] = g.values[i] * x.values[j];
            gx[j] += a.values[i * n + j] * g.values[i];
          }
        }
        return std::vector<Tensor>{like(a, std::move(ga)), like(x, std::move(gx))};
      }});
  return id;
}

OpId tanh_op() {
  static const OpId id = OpRegistry::global().add(CustomOpDef{
      "tanh",
      [](InputValues in, std::any&) {
        std::vector<double> v(in[0]->values);
        for (double& x : v) x = std::tanh(x);
        return like(*in[0], std::move(v));
      },
      [](const Tensor& g, InputValues in, const Tensor& out, const std::any&) {
        std::vector<double> v(g.size());
        for (std::size_t i = 0; i < v.size(); ++i)
          v[i] = g.values[i] * (1.0 - out.values[i] * out.values[i]);
        return std::vector<Tensor>{like(*in[0], std::move(v))};
      }});
  return id;
}

struct LinearContext {
  std::size_t offset, in, out;
};

OpId linear_op() {
  static const OpId id = OpRegistry::global().add(CustomOpDef{
      "linear",
      [](InputValues in, std::any& ctx) {
        const auto c = std::any_cast<LinearContext>(ctx);
        const Tensor& x = *in[0];
        const Tensor& params = *in[1];
        if (x.shape.size() != 2 || x.shape[1] != c.in)
          throw ContractError("linear: input must have shape {points, in}");
        if (c.offset + c.in * c.out + c.out > params.size())
          throw ContractError("linear: parameter slice out of range");
        if (!all_finite(params.values)) throw NumericError("linear", "non-finite parameter");
        const kernels::DenseShape s{x.shape[0], c.in, c.out};
        std::vector<double> y(s.points * s.out);
        const auto w = std::span(params.values).subspan(c.offset, c.in * c.out);
        const auto b = std::span(params.values).subspan(c.offset + c.in * c.out, c.out);
        kernels::dense_forward(s, x.values, w, b, y);
        return Tensor({s.points, s.out}, std::move(y));
      },
      [](const Tensor& g, InputValues in, const Tensor&, const std::any& ctx) {
        const auto c = std::any_cast<LinearContext>(ctx);
        const Tensor& x = *in[0];
        const Tensor& params = *in[1];
        const kernels::DenseShape s{x.shape[0], c.in, c.out};
        std::vector<double> gx(x.size()), gp(params.size(), 0.0);
        const auto w = std::span(params.values).subspan(c.offset, c.in * c.out);
        kernels::dense_backward(s, x.values, w, g.values, gx,
                                std::span(gp).subspan(c.offset, c.in * c.out),
                                std::span(gp).subspan(c.offset + c.in * c.out, c.out));
        return std::vector<Tensor>{like(x, std::move(gx)), like(params, std::move(gp))};
      }});
  return id;
}

OpId clamp_min_op() {
  static const OpId id = OpRegistry::global().add(CustomOpDef{
      "clamp_min",
      [](InputValues in, std::any& ctx) {
        const double floor = std::any_cast<double>(ctx);
        std::vector<double> v(in[0]->values);
        for (double& x : v) x = std::max(x, floor);
        return like(*in[0], std::move(v));
      },
      [](const Tensor& g, InputValues in, const Tensor&, const std::any& ctx) {
        const double floor = std::any_cast<double>(ctx);
        std::vector<double> v(g.size());
        for (std::size_t i = 0; i < v.size(); ++i)
          v[i] = in[0]->values[i] >= floor ? g.values[i] : 0.0;
        return std::vector<Tensor>{like(*in[0], std::move(v))};
      }});
  return id;
}

using IndexList = std::shared_ptr<const std::vector<std::size_t>>;

OpId gather_op() {
  static const OpId id = OpRegistry::global().add(CustomOpDef{
      "gather",
      [](InputValues in, std::any& ctx) {
        const auto& idx = *std::any_cast<IndexList>(ctx);
        std::vector<double> v(idx.size());
        for (std::size_t k = 0; k < idx.size(); ++k) {
          if (idx[k] >= in[0]->size()) throw ContractError("gather: index out of range");
          v[k] = in[0]->values[idx[k]];
        }
        return Tensor(std::move(v));
      },
      [](const Tensor& g, InputValues in, const Tensor&, const std::any& ctx) {
        const auto& idx = *std::any_cast<IndexList>(ctx);
        std::vector<double> v(in[0]->size(), 0.0);
        for (std::size_t k = 0; k < idx.size(); ++k) v[idx[k]] += g.values[k];
        return std::vector<Tensor>{like(*in[0], std::move(v))};
      }});
  return id;
}

OpId zero_entries_op() {
  static const OpId id = OpRegistry::global().add(CustomOpDef{
      "zero_entries",
      [](InputValues in, std::any& ctx) {
        const auto& idx = *std::any_cast<IndexList>(ctx);
        std::vector<double> v(in[0]->values);
        for (std::size_t k : idx) {
          if (k >= v.size()) throw ContractError("zero_entries: index out of range");
          v[k] = 0.0;
        }
        return like(*in[0], std::move(v));
      },
      [](const Tensor& g, InputValues in, const Tensor&, const std::any& ctx) {
        const auto& idx = *std::any_cast<IndexList>(ctx);
        std::vector<double> v(g.values);
        for (std::size_t k : idx) v[k] = 0.0;
        return std::vector<Tensor>{like(*in[0], std::move(v))};
      }});
  return id;
}

OpId concat_op() {
  static const OpId id = OpRegistry::global().add(CustomOpDef{
      "concat",
      [](InputValues in, std::any&) {
        std::vector<double> v;
        for (const Tensor* t : in) v.insert(v.end(), t->values.begin(), t->values.end());
        return Tensor(std::move(v));
      },
      [](const Tensor& g, InputValues in, const Tensor&, const std::any&) {
        std::vector<Tensor> out;
        std::size_t pos = 0;
        for (const Tensor* t : in) {
          auto first = g.values.begin() + static_cast<std::ptrdiff_t>(pos);
          out.push_back(like(*t, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(t->size()))));
          pos += t->size();
        }
        return out;
      }});
  return id;
}

using Target = std::shared_ptr<const std::vector<double>>;

OpId squared_error_op() {
  static const OpId id = OpRegistry::global().add(CustomOpDef{
      "squared_error",
      [](InputValues in, std::any& ctx) {
        const auto& target = *std::any_cast<Target>(ctx);
        if (target.size() != in[0]->size()) throw ContractError("squared_error: size mismatch");
        double s = 0.0;
        for (std::size_t i = 0; i < target.size(); ++i) {
          const double d = in[0]->values[i] - target[i];
          s += d * d;
        }
        return Tensor::scalar(s);
      },
      [](const Tensor& g, InputValues in, const Tensor&, const std::any& ctx) {
        const auto& target = *std::any_cast<Target>(ctx);
        std::vector<double> v(target.size());
        for (std::size_t i = 0; i < v.size(); ++i)
          v[i] = 2.0 * g.item() * (in[0]->values[i] - target[i]);
        return std::vector<Tensor>{like(*in[0], std::move(v))};
      }});
  return id;
}

}  // namespace

NodeId add(Tape& t, NodeId a, NodeId b) { return t.apply(add_op(), {a, b}); }
NodeId sub(Tape& t, NodeId a, NodeId b) { return t.apply(sub_op(), {a, b}); }
NodeId mul(Tape& t, NodeId a, NodeId b) { return t.apply(mul_op(), {a, b}); }
NodeId scale(Tape& t, NodeId a, double c) { return t.apply(scale_op(), {a}, c); }
NodeId add_scalar(Tape& t, NodeId a, double c) { return t.apply(add_scalar_op(), {a}, c); }
NodeId sum(Tape& t, NodeId a) { return t.apply(sum_op(), {a}); }
NodeId dot(Tape& t, NodeId a, NodeId b) { return t.apply(dot_op(), {a, b}); }
NodeId matmul(Tape& t, NodeId a, NodeId x) { return t.apply(matmul_op(), {a, x}); }
NodeId tanh(Tape& t, NodeId a) { return t.apply(tanh_op(), {a}); }

NodeId linear(Tape& t, NodeId x, NodeId params, std::size_t offset, std::size_t in,
              std::size_t out) {
  return t.apply(linear_op(), {x, params}, LinearContext{offset, in, out});
}

NodeId clamp_min(Tape& t, NodeId a, double floor, std::size_t* clamped) {
  NodeId out = t.apply(clamp_min_op(), {a}, floor);
  if (clamped) {
    *clamped = 0;
    for (double x : t.value(a).values)
      if (x < floor) ++*clamped;
  }
  return out;
}

NodeId gather(Tape& t, NodeId a, std::vector<std::size_t> indices) {
  return t.apply(gather_op(), {a},
                 IndexList(std::make_shared<const std::vector<std::size_t>>(std::move(indices))));
}

NodeId strided(Tape& t, NodeId a, std::size_t start, std::size_t stride, std::size_t count) {
  std::vector<std::size_t> idx(count);
  for (std::size_t k = 0; k < count; ++k) idx[k] = start + k * stride;
  return gather(t, a, std::move(idx));
}

NodeId zero_entries(Tape& t, NodeId a, std::vector<std::size_t> indices) {
  return t.apply(zero_entries_op(), {a},
                 IndexList(std::make_shared<const std::vector<std::size_t>>(std::move(indices))));
}

NodeId concat(Tape& t, std::span<const NodeId> parts) {
  return t.apply(concat_op(), std::vector<NodeId>(parts.begin(), parts.end()));
}

NodeId squared_error(Tape& t, NodeId pred, std::vector<double> target) {
  return t.apply(squared_error_op(), {pred},
                 Target(std::make_shared<const std::vector<double>>(std::move(target))));
}

}  // namespace flowgrad::ops
