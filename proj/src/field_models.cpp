#include "flowgrad/field_models.hpp"

#include <bit>
#include <cmath>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>

#include "flowgrad/errors.hpp"
#include "flowgrad/ops.hpp"

namespace flowgrad::models {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::dnn2d: return "dnn2d";
    case Variant::dnn_layered: return "dnn_layered";
    case Variant::pointwise: return "pointwise";
  }
  return "?";
}

Variant parse_variant(const std::string& name) {
  if (name == "dnn2d") return Variant::dnn2d;
  if (name == "dnn_layered") return Variant::dnn_layered;
  if (name == "pointwise") return Variant::pointwise;
  throw ContractError("unknown field-model variant: " + name);
}

std::size_t MLPParams::count(std::span<const std::size_t> sizes) {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) n += sizes[l] * sizes[l + 1] + sizes[l + 1];
  return n;
}

std::size_t MLPParams::weight_offset(std::size_t layer) const {
  return count(std::span(layer_sizes).first(layer + 1));
}

std::size_t MLPParams::bias_offset(std::size_t layer) const {
  return weight_offset(layer) + layer_sizes[layer] * layer_sizes[layer + 1];
}

std::vector<MLPParams::Layer> MLPParams::unflatten() const {
  if (flat.size() != count(layer_sizes)) throw ContractError("MLP parameter count mismatch");
  std::vector<Layer> layers(num_layers());
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto w = flat.begin() + static_cast<std::ptrdiff_t>(weight_offset(l));
    const auto b = flat.begin() + static_cast<std::ptrdiff_t>(bias_offset(l));
    layers[l].weights.assign(w, b);
    layers[l].biases.assign(b, b + static_cast<std::ptrdiff_t>(layer_sizes[l + 1]));
  }
  return layers;
}

MLPParams MLPParams::flatten(std::vector<std::size_t> sizes, std::span<const Layer> layers) {
  if (layers.size() + 1 != sizes.size()) throw ContractError("MLP layer count mismatch");
  MLPParams p{std::move(sizes), {}};
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (layers[l].weights.size() != p.layer_sizes[l] * p.layer_sizes[l + 1] ||
        layers[l].biases.size() != p.layer_sizes[l + 1])
      throw ContractError("MLP layer shape mismatch");
    p.flat.insert(p.flat.end(), layers[l].weights.begin(), layers[l].weights.end());
    p.flat.insert(p.flat.end(), layers[l].biases.begin(), layers[l].biases.end());
  }
  return p;
}

std::vector<std::size_t> default_layer_sizes(Variant v) {
  switch (v) {
    case Variant::dnn2d: return {2, 20, 20, 20, 1};
    case Variant::dnn_layered: return {1, 20, 20, 20, 1};
    case Variant::pointwise: return {};
  }
  return {};
}

FieldModel init_params(Variant variant, std::uint64_t seed, double init_scale,
                       OutputTransform transform, std::size_t num_nodes) {
  FieldModel m;
  m.variant = variant;
  m.transform = transform;
  m.seed = seed;
  if (variant == Variant::pointwise) {
    m.params.assign(num_nodes, transform.offset);
    return m;
  }
  m.layer_sizes = default_layer_sizes(variant);
  MLPParams p{m.layer_sizes, std::vector<double>(MLPParams::count(m.layer_sizes), 0.0)};
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l < p.num_layers(); ++l) {
    const double fan_in = static_cast<double>(p.layer_sizes[l]);
    const double fan_out = static_cast<double>(p.layer_sizes[l + 1]);
    const double bound = init_scale * std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    const std::size_t w0 = p.weight_offset(l);
    for (std::size_t k = 0; k < p.layer_sizes[l] * p.layer_sizes[l + 1]; ++k)
      p.flat[w0 + k] = dist(rng);
  }
  m.params = std::move(p.flat);
  return m;
}

ad::NodeId mlp_eval(ad::Tape& t, std::span<const std::size_t> layer_sizes, ad::NodeId params,
                    std::span<const double> points) {
  if (layer_sizes.size() < 2) throw ContractError("MLP needs at least one layer");
  const std::size_t d_in = layer_sizes.front();
  if (points.size() % d_in != 0) throw ContractError("point batch not a multiple of d_in");
  if (t.value(params).size() != MLPParams::count(layer_sizes))
    throw ContractError("MLP parameter count mismatch");
  if (!all_finite(t.value(params).values)) throw NumericError("mlp_eval", "non-finite parameter");
  const std::size_t n = points.size() / d_in;
  ad::NodeId h = t.constant(Tensor({n, d_in}, std::vector<double>(points.begin(), points.end())));
  std::size_t offset = 0;
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    h = ops::linear(t, h, params, offset, layer_sizes[l], layer_sizes[l + 1]);
    if (l + 2 < layer_sizes.size()) h = ops::tanh(t, h);
    offset += layer_sizes[l] * layer_sizes[l + 1] + layer_sizes[l + 1];
  }
  return h;
}

namespace {

std::vector<double> input_points(const FieldModel& model, const fem::StructuredGrid& grid) {
  std::vector<double> pts;
  for (const auto& p : grid.coords()) {
    pts.push_back(p.x);
    if (model.variant == Variant::dnn2d) pts.push_back(p.y);
  }
  return pts;
}

}  // namespace

FieldEvaluation eval_field_on_grid(ad::Tape& t, const FieldModel& model, ad::NodeId params,
                                   const fem::StructuredGrid& grid) {
  FieldEvaluation out;
  ad::NodeId raw;
  if (model.variant == Variant::pointwise) {
    if (t.value(params).size() != grid.num_nodes())
      throw ContractError("pointwise parameter count != node count");
    raw = params;
  } else {
    raw = mlp_eval(t, model.layer_sizes, params, input_points(model, grid));
    raw = ops::add_scalar(t, raw, model.transform.offset);
  }
  out.values = ops::clamp_min(t, raw, model.transform.floor, &out.clamped);
  return out;
}

std::vector<double> eval_field_values(const FieldModel& model, const fem::StructuredGrid& grid) {
  ad::Tape t;
  const ad::NodeId p = t.constant(Tensor(model.params));
  return t.value(eval_field_on_grid(t, model, p, grid).values).values;
}

double output_bound(const FieldModel& model) {
  if (model.variant == Variant::pointwise) throw ContractError("output_bound needs a network");
  const MLPParams p{model.layer_sizes, model.params};
  const std::size_t last = p.num_layers() - 1;
  double bound = 0.0;
  for (std::size_t k = 0; k < p.layer_sizes[last] * p.layer_sizes[last + 1]; ++k)
    bound += std::abs(p.flat[p.weight_offset(last) + k]);
  return bound + std::abs(p.flat[p.bias_offset(last)]);
}

void ClampMonitor::record(std::size_t clamped, std::size_t total) {
  if (static_cast<double>(clamped) > fraction_ * static_cast<double>(total))
    ++streak_;
  else
    streak_ = 0;
  if (streak_ >= patience_)
    throw DivergedParameterizationError(
        "coefficient floor active on more than " + std::to_string(fraction_ * 100) +
        "% of nodes for " + std::to_string(patience_) + " consecutive steps");
}

void write_checkpoint(std::ostream& os, const FieldModel& model) {
  os << to_string(model.variant) << ',';
  if (model.variant == Variant::pointwise) {
    os << model.params.size();
  } else {
    for (std::size_t l = 0; l < model.layer_sizes.size(); ++l)
      os << (l ? "x" : "") << model.layer_sizes[l];
  }
  os << ',' << model.seed << '\n';
  for (double v : model.params) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    char bytes[8];
    for (int b = 0; b < 8; ++b) bytes[b] = static_cast<char>((bits >> (8 * b)) & 0xff);
    os.write(bytes, 8);
  }
}

FieldModel read_checkpoint(std::istream& is) {
  std::string header;
  if (!std::getline(is, header)) throw ContractError("empty checkpoint");
  std::stringstream ss(header);
  std::string variant, sizes, seed;
  if (!std::getline(ss, variant, ',') || !std::getline(ss, sizes, ',') || !std::getline(ss, seed))
    throw ContractError("bad checkpoint header: " + header);
  FieldModel m;
  m.variant = parse_variant(variant);
  m.seed = std::stoull(seed);
  std::size_t count = 0;
  if (m.variant == Variant::pointwise) {
    count = std::stoull(sizes);
  } else {
    std::stringstream ls(sizes);
    std::string tok;
    while (std::getline(ls, tok, 'x')) m.layer_sizes.push_back(std::stoull(tok));
    count = MLPParams::count(m.layer_sizes);
  }
  m.params.resize(count);
  for (double& v : m.params) {
    unsigned char bytes[8];
    if (!is.read(reinterpret_cast<char*>(bytes), 8)) throw ContractError("truncated checkpoint");
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[b]) << (8 * b);
    v = std::bit_cast<double>(bits);
  }
  return m;
}

}  // namespace flowgrad::models
