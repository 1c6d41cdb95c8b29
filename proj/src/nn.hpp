#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace dormant {

enum class LayerKind { Dense, Conv, MaxPool, Flatten, Relu };

const char* to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& name);

struct LayerSpec {
  LayerKind kind = LayerKind::Relu;
  // Dense: in_features, out_features. Conv: in_channels, out_channels,
  // kernel_h, kernel_w. Unused for the parameter-free kinds.
  std::vector<int> dims;

  static LayerSpec dense(int in, int out) { return {LayerKind::Dense, {in, out}}; }
  static LayerSpec conv(int in_ch, int out_ch, int kh, int kw) {
    return {LayerKind::Conv, {in_ch, out_ch, kh, kw}};
  }
  static LayerSpec maxpool() { return {LayerKind::MaxPool, {}}; }
  static LayerSpec flatten() { return {LayerKind::Flatten, {}}; }
  static LayerSpec relu() { return {LayerKind::Relu, {}}; }

  bool parameterized() const { return kind == LayerKind::Dense || kind == LayerKind::Conv; }
  bool operator==(const LayerSpec&) const = default;
};

struct NetworkSpec {
  std::vector<LayerSpec> layers;
  Shape input_shape;  // per-sample shape, without the batch dimension
  int num_classes = 0;

  bool operator==(const NetworkSpec&) const = default;
};

// Per-sample output shape after every layer; throws a spec error naming the
// first offending layer.
std::vector<Shape> validate(const NetworkSpec& spec);

NetworkSpec mnist_cnn_spec();
NetworkSpec mnist_mlp_spec();

// Parameters of one dense/conv layer. `layer` is the 1-based ordinal among
// parameterized layers (the r in W_r), `spec_index` its position in
// NetworkSpec::layers.
struct LayerParams {
  int layer = 0;
  int spec_index = 0;
  Tensor weights;
  Tensor biases;

  bool operator==(const LayerParams&) const = default;
};

struct ParameterSet {
  std::vector<LayerParams> entries;

  std::size_t count() const;
  const LayerParams& at_layer(int layer) const;
  LayerParams& at_layer(int layer);
};

bool bitwise_equal(const ParameterSet& a, const ParameterSet& b);

std::vector<Shape> weight_shapes(const NetworkSpec& spec);
std::size_t parameter_count(const NetworkSpec& spec);

// Weights ~ U(−√(1/fan_in), √(1/fan_in)), biases zero.
ParameterSet init_params(const NetworkSpec& spec, std::uint64_t seed);

// Checks that `params` matches the layout implied by `spec`.
void check_compatible(const NetworkSpec& spec, const ParameterSet& params);

struct LayerVars {
  Var weights;
  Var biases;
};

// Records the forward pass on `graph`; `layer_vars` is ordered like
// ParameterSet::entries.
Var forward(const NetworkSpec& spec, std::span<const LayerVars> layer_vars, Var batch);

Tensor forward(const NetworkSpec& spec, const ParameterSet& params, const Tensor& batch);

// Row-wise argmax, ties resolved toward the lower class index.
std::vector<int> argmax_rows(const Tensor& logits);
std::vector<int> predict(const NetworkSpec& spec, const ParameterSet& params, const Tensor& batch);

}  // namespace dormant
