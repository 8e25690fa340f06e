#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "flowgrad/grid.hpp"
#include "flowgrad/tape.hpp"

namespace flowgrad::models {

enum class Variant { dnn2d, dnn_layered, pointwise };

std::string to_string(Variant v);
/// Throws ContractError for unknown names.
Variant parse_variant(const std::string& name);

/// Flat storage of a fully connected network. Layer l stores W_l (fan_in x
/// fan_out, row-major) followed by b_l.
struct MLPParams {
  std::vector<std::size_t> layer_sizes;
  std::vector<double> flat;

  struct Layer {
    std::vector<double> weights;
    std::vector<double> biases;
  };

  static std::size_t count(std::span<const std::size_t> layer_sizes);
  std::size_t weight_offset(std::size_t layer) const;
  std::size_t bias_offset(std::size_t layer) const;
  std::size_t num_layers() const noexcept { return layer_sizes.size() - 1; }

  std::vector<Layer> unflatten() const;
  static MLPParams flatten(std::vector<std::size_t> layer_sizes, std::span<const Layer> layers);
};

/// Physical coefficient = raw network output + offset, floored at `floor`.
/// For the pointwise variant the parameters are the nodal values themselves;
/// `offset` is then only the initial value.
struct OutputTransform {
  double offset = 1.0;
  double floor = 1e-6;
};

struct FieldModel {
  Variant variant = Variant::dnn2d;
  std::vector<std::size_t> layer_sizes;  // empty for pointwise
  OutputTransform transform;
  std::uint64_t seed = 0;
  std::vector<double> params;
};

/// Default architecture: three hidden tanh layers of width 20 and a linear output.
std::vector<std::size_t> default_layer_sizes(Variant v);

/// Xavier-uniform weights scaled by `init_scale`, zero biases. The pointwise
/// variant gets `transform.offset` at every node.
FieldModel init_params(Variant variant, std::uint64_t seed, double init_scale,
                       OutputTransform transform, std::size_t num_nodes);

/// Raw network output (no transform) at `points`, a row-major {n, d_in} batch.
ad::NodeId mlp_eval(ad::Tape& t, std::span<const std::size_t> layer_sizes, ad::NodeId params,
                    std::span<const double> points);

struct FieldEvaluation {
  ad::NodeId values;
  std::size_t clamped = 0;  // nodes where the positivity floor was active
};

/// Coefficient at every grid node. `params` must hold the model's parameters.
FieldEvaluation eval_field_on_grid(ad::Tape& t, const FieldModel& model, ad::NodeId params,
                                   const fem::StructuredGrid& grid);
/// Tape-free evaluation of the current parameters.
std::vector<double> eval_field_values(const FieldModel& model, const fem::StructuredGrid& grid);

/// Upper bound on |raw output| from tanh boundedness: ||W_last||_1 + |b_last|.
double output_bound(const FieldModel& model);

/// Tracks how often the positivity floor fires across optimizer steps.
class ClampMonitor {
public:
  explicit ClampMonitor(double fraction = 0.1, int patience = 10)
      : fraction_(fraction), patience_(patience) {}
  /// Throws DivergedParameterizationError after `patience` consecutive steps
  /// with more than `fraction` of nodes clamped.
  void record(std::size_t clamped, std::size_t total);
  int streak() const noexcept { return streak_; }

private:
  double fraction_;
  int patience_;
  int streak_ = 0;
};

/// One text line `variant,layer_sizes,seed` followed by little-endian doubles.
void write_checkpoint(std::ostream& os, const FieldModel& model);
FieldModel read_checkpoint(std::istream& is);

}  // namespace flowgrad::models
