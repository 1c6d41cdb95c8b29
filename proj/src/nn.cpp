#include "nn.hpp"

#include <cmath>

#include "errors.hpp"
#include "rng.hpp"

namespace dormant {

const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Dense: return "dense";
    case LayerKind::Conv: return "conv";
    case LayerKind::MaxPool: return "maxpool";
    case LayerKind::Flatten: return "flatten";
    case LayerKind::Relu: return "relu";
  }
  return "?";
}

LayerKind layer_kind_from_string(const std::string& name) {
  for (LayerKind k : {LayerKind::Dense, LayerKind::Conv, LayerKind::MaxPool, LayerKind::Flatten,
                      LayerKind::Relu}) {
    if (name == to_string(k)) return k;
  }
  fail(ErrorKind::Spec, "unknown layer kind '" + name + "'");
}

std::vector<Shape> validate(const NetworkSpec& spec) {
  if (spec.input_shape.empty()) fail(ErrorKind::Spec, "empty input shape");
  for (int d : spec.input_shape) {
    if (d <= 0) fail(ErrorKind::Spec, "non-positive input extent in " + shape_string(spec.input_shape));
  }
  if (spec.num_classes < 1) fail(ErrorKind::Spec, "num_classes must be positive");

  std::vector<Shape> shapes;
  Shape cur = spec.input_shape;
  bool any_params = false;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    auto bad = [&](const std::string& why) {
      fail(ErrorKind::Spec, "layer " + std::to_string(i) + " (" + to_string(l.kind) + "): " + why +
                                "; incoming shape " + shape_string(cur));
    };
    switch (l.kind) {
      case LayerKind::Dense:
        if (l.dims.size() != 2 || l.dims[0] <= 0 || l.dims[1] <= 0) bad("needs positive in/out features");
        if (cur.size() != 1 || cur[0] != l.dims[0]) bad("expects " + std::to_string(l.dims[0]) + " features");
        cur = {l.dims[1]};
        any_params = true;
        break;
      case LayerKind::Conv:
        if (l.dims.size() != 4) bad("needs in/out channels and kernel size");
        for (int d : l.dims) {
          if (d <= 0) bad("non-positive dimension");
        }
        if (cur.size() != 3 || cur[0] != l.dims[0]) bad("expects " + std::to_string(l.dims[0]) + " channels");
        if (l.dims[2] > cur[1] || l.dims[3] > cur[2]) bad("kernel larger than input");
        cur = {l.dims[1], cur[1] - l.dims[2] + 1, cur[2] - l.dims[3] + 1};
        any_params = true;
        break;
      case LayerKind::MaxPool:
        if (!l.dims.empty()) bad("takes no dimensions");
        if (cur.size() != 3 || cur[1] < 2 || cur[2] < 2) bad("needs C×H×W input with H,W ≥ 2");
        cur = {cur[0], cur[1] / 2, cur[2] / 2};
        break;
      case LayerKind::Flatten:
        if (!l.dims.empty()) bad("takes no dimensions");
        cur = {static_cast<int>(shape_numel(cur))};
        break;
      case LayerKind::Relu:
        if (!l.dims.empty()) bad("takes no dimensions");
        break;
    }
    shapes.push_back(cur);
  }
  if (!any_params) fail(ErrorKind::Spec, "network has no parameterized layer");
  if (cur.size() != 1 || cur[0] != spec.num_classes) {
    fail(ErrorKind::Spec, "final layer outputs " + shape_string(cur) + ", expected " +
                              std::to_string(spec.num_classes) + " logits");
  }
  return shapes;
}

NetworkSpec mnist_cnn_spec() {
  return NetworkSpec{{LayerSpec::conv(1, 8, 3, 3), LayerSpec::relu(), LayerSpec::maxpool(),
                      LayerSpec::conv(8, 16, 3, 3), LayerSpec::relu(), LayerSpec::maxpool(),
                      LayerSpec::flatten(), LayerSpec::dense(16 * 5 * 5, 10)},
                     {1, 28, 28},
                     10};
}

NetworkSpec mnist_mlp_spec() {
  return NetworkSpec{{LayerSpec::flatten(), LayerSpec::dense(784, 256), LayerSpec::relu(),
                      LayerSpec::dense(256, 10)},
                     {1, 28, 28},
                     10};
}

std::size_t ParameterSet::count() const {
  std::size_t n = 0;
  for (const auto& e : entries) n += e.weights.numel() + e.biases.numel();
  return n;
}

const LayerParams& ParameterSet::at_layer(int layer) const {
  if (layer < 1 || static_cast<std::size_t>(layer) > entries.size()) {
    fail(ErrorKind::Parameter, "no parameterized layer " + std::to_string(layer) + " (network has " +
                                   std::to_string(entries.size()) + ")");
  }
  return entries[static_cast<std::size_t>(layer - 1)];
}

LayerParams& ParameterSet::at_layer(int layer) {
  return const_cast<LayerParams&>(static_cast<const ParameterSet&>(*this).at_layer(layer));
}

bool bitwise_equal(const ParameterSet& a, const ParameterSet& b) {
  if (a.entries.size() != b.entries.size()) return false;
  for (std::size_t i = 0; i < a.entries.size(); ++i) {
    const auto& x = a.entries[i];
    const auto& y = b.entries[i];
    if (x.layer != y.layer || x.spec_index != y.spec_index || !bitwise_equal(x.weights, y.weights) ||
        !bitwise_equal(x.biases, y.biases)) {
      return false;
    }
  }
  return true;
}

std::vector<Shape> weight_shapes(const NetworkSpec& spec) {
  validate(spec);
  std::vector<Shape> out;
  for (const auto& l : spec.layers) {
    if (l.kind == LayerKind::Dense) out.push_back({l.dims[0], l.dims[1]});
    if (l.kind == LayerKind::Conv) out.push_back({l.dims[1], l.dims[0], l.dims[2], l.dims[3]});
  }
  return out;
}

std::size_t parameter_count(const NetworkSpec& spec) {
  std::size_t n = 0;
  for (const auto& l : spec.layers) {
    if (l.kind == LayerKind::Dense) n += static_cast<std::size_t>(l.dims[0]) * l.dims[1] + l.dims[1];
    if (l.kind == LayerKind::Conv) {
      n += static_cast<std::size_t>(l.dims[1]) * l.dims[0] * l.dims[2] * l.dims[3] + l.dims[1];
    }
  }
  return n;
}

ParameterSet init_params(const NetworkSpec& spec, std::uint64_t seed) {
  validate(spec);
  Rng rng(seed);
  ParameterSet params;
  int ordinal = 0;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    if (!l.parameterized()) continue;
    LayerParams p;
    p.layer = ++ordinal;
    p.spec_index = static_cast<int>(i);
    int fan_in = 0;
    if (l.kind == LayerKind::Dense) {
      p.weights = Tensor({l.dims[0], l.dims[1]});
      p.biases = Tensor({l.dims[1]});
      fan_in = l.dims[0];
    } else {
      p.weights = Tensor({l.dims[1], l.dims[0], l.dims[2], l.dims[3]});
      p.biases = Tensor({l.dims[1]});
      fan_in = l.dims[0] * l.dims[2] * l.dims[3];
    }
    const float bound = static_cast<float>(std::sqrt(1.0 / fan_in));
    for (float& w : p.weights.data) w = rng.uniform(-bound, bound);
    params.entries.push_back(std::move(p));
  }
  return params;
}

void check_compatible(const NetworkSpec& spec, const ParameterSet& params) {
  const auto shapes = weight_shapes(spec);
  if (shapes.size() != params.entries.size()) {
    fail(ErrorKind::Dimension, "network has " + std::to_string(shapes.size()) +
                                   " parameterized layers but parameter set has " +
                                   std::to_string(params.entries.size()));
  }
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const auto& e = params.entries[i];
    // Dense weights are in×out, conv kernels F×C×kh×kw.
    const int outputs = shapes[i].size() == 2 ? shapes[i][1] : shapes[i][0];
    if (e.weights.shape != shapes[i] || e.biases.shape != Shape{outputs}) {
      fail(ErrorKind::Dimension, "layer " + std::to_string(i + 1) + ": weights " +
                                     shape_string(e.weights.shape) + ", biases " +
                                     shape_string(e.biases.shape) + " do not match expected " +
                                     shape_string(shapes[i]));
    }
  }
}

Var forward(const NetworkSpec& spec, std::span<const LayerVars> layer_vars, Var batch) {
  const Tensor& in = batch.value();
  Shape expected{in.rank() > 0 ? in.dim(0) : 0};
  expected.insert(expected.end(), spec.input_shape.begin(), spec.input_shape.end());
  if (in.shape != expected) {
    fail(ErrorKind::Dimension, "batch shape " + shape_string(in.shape) + " does not match N×" +
                                   shape_string(spec.input_shape));
  }
  Var x = batch;
  std::size_t p = 0;
  for (const LayerSpec& l : spec.layers) {
    switch (l.kind) {
      case LayerKind::Dense: {
        if (p >= layer_vars.size()) fail(ErrorKind::Dimension, "missing parameters for dense layer");
        x = bias_add(matmul(x, layer_vars[p].weights), layer_vars[p].biases);
        ++p;
        break;
      }
      case LayerKind::Conv: {
        if (p >= layer_vars.size()) fail(ErrorKind::Dimension, "missing parameters for conv layer");
        x = conv2d(x, layer_vars[p].weights, layer_vars[p].biases);
        ++p;
        break;
      }
      case LayerKind::MaxPool: x = maxpool2x2(x); break;
      case LayerKind::Flatten: x = flatten(x); break;
      case LayerKind::Relu: x = relu(x); break;
    }
  }
  return x;
}

Tensor forward(const NetworkSpec& spec, const ParameterSet& params, const Tensor& batch) {
  check_compatible(spec, params);
  Graph g;
  std::vector<LayerVars> vars;
  vars.reserve(params.entries.size());
  for (const auto& e : params.entries) vars.push_back({g.constant(e.weights), g.constant(e.biases)});
  Var out = forward(spec, vars, g.constant(batch));
  return out.value();
}

std::vector<int> argmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) fail(ErrorKind::Dimension, "argmax expects N×n logits");
  const int n = logits.dim(0), k = logits.dim(1);
  std::vector<int> out(static_cast<std::size_t>(n));
  for (int r = 0; r < n; ++r) {
    const float* row = logits.data.data() + static_cast<std::size_t>(r) * k;
    int best = 0;
    for (int c = 1; c < k; ++c) {
      if (row[c] > row[best]) best = c;
    }
    out[static_cast<std::size_t>(r)] = best;
  }
  return out;
}

std::vector<int> predict(const NetworkSpec& spec, const ParameterSet& params, const Tensor& batch) {
  return argmax_rows(forward(spec, params, batch));
}

}  // namespace dormant
