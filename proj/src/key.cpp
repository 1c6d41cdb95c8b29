#include "key.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "bytes.hpp"
#include "errors.hpp"
#include "rng.hpp"

namespace dormant {

std::vector<float> SecretWeightKey::densify(std::size_t flat_size) const {
  std::vector<float> out(flat_size, 0.0f);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::uint32_t idx = flat_index(i);
    if (idx >= flat_size) fail(ErrorKind::Dimension, "key index " + std::to_string(idx) + " outside layer");
    out[idx] = values[i];
  }
  return out;
}

bool SecretWeightKey::is_zero() const {
  return std::all_of(values.begin(), values.end(), [](float v) { return v == 0.0f; });
}

bool bitwise_equal(const SecretWeightKey& a, const SecretWeightKey& b) {
  return a.layer_index == b.layer_index && a.support == b.support && a.indices == b.indices &&
         a.values.size() == b.values.size() &&
         std::memcmp(a.values.data(), b.values.data(), a.values.size() * sizeof(float)) == 0;
}

namespace {

std::size_t layer_flat_size(const NetworkSpec& spec, int layer_index) {
  const auto shapes = weight_shapes(spec);
  if (layer_index < 1 || static_cast<std::size_t>(layer_index) > shapes.size()) {
    fail(ErrorKind::Parameter, "key layer " + std::to_string(layer_index) + " does not exist (network has " +
                                   std::to_string(shapes.size()) + " parameterized layers)");
  }
  return shape_numel(shapes[static_cast<std::size_t>(layer_index - 1)]);
}

// Values are keyed by flat index so sparse and dense keys drawn from the
// same seed agree wherever their supports overlap.
float key_value(std::uint64_t seed, std::uint32_t flat_index, float scale) {
  return hashed_uniform(seed, flat_index, -scale, scale);
}

}  // namespace

SecretWeightKey new_sparse_key(const NetworkSpec& spec, int layer_index, std::size_t k,
                               std::uint64_t seed, float scale) {
  const std::size_t n = layer_flat_size(spec, layer_index);
  if (k < 1 || k > n) {
    fail(ErrorKind::Parameter, "sparse key size " + std::to_string(k) + " outside [1, " + std::to_string(n) + "]");
  }
  Rng rng(seed);
  auto perm = rng.permutation(n);
  perm.resize(k);
  std::sort(perm.begin(), perm.end());
  SecretWeightKey key;
  key.layer_index = layer_index;
  key.support = KeySupport::Sparse;
  for (std::size_t idx : perm) {
    key.indices.push_back(static_cast<std::uint32_t>(idx));
    key.values.push_back(key_value(seed, static_cast<std::uint32_t>(idx), scale));
  }
  return key;
}

SecretWeightKey new_dense_key(const NetworkSpec& spec, int layer_index, std::uint64_t seed, float scale) {
  const std::size_t n = layer_flat_size(spec, layer_index);
  SecretWeightKey key;
  key.layer_index = layer_index;
  key.support = KeySupport::Dense;
  key.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) key.values[i] = key_value(seed, static_cast<std::uint32_t>(i), scale);
  return key;
}

void check_key(const ParameterSet& params, const SecretWeightKey& key) {
  if (key.layer_index < 1 || static_cast<std::size_t>(key.layer_index) > params.entries.size()) {
    fail(ErrorKind::Dimension, "key targets layer " + std::to_string(key.layer_index) + " but the model has " +
                                   std::to_string(params.entries.size()) + " parameterized layers");
  }
  const Tensor& w = params.at_layer(key.layer_index).weights;
  if (key.support == KeySupport::Dense) {
    if (key.values.size() != w.numel()) {
      fail(ErrorKind::Dimension, "dense key has " + std::to_string(key.values.size()) + " values but layer " +
                                     std::to_string(key.layer_index) + " weights " + shape_string(w.shape) +
                                     " hold " + std::to_string(w.numel()));
    }
    return;
  }
  if (key.indices.size() != key.values.size() || key.indices.empty()) {
    fail(ErrorKind::Dimension, "sparse key needs one value per index and at least one entry");
  }
  for (std::size_t i = 0; i < key.indices.size(); ++i) {
    if (key.indices[i] >= w.numel()) {
      fail(ErrorKind::Dimension, "key index " + std::to_string(key.indices[i]) + " outside layer " +
                                     std::to_string(key.layer_index) + " weights " + shape_string(w.shape));
    }
    if (i > 0 && key.indices[i] <= key.indices[i - 1]) {
      fail(ErrorKind::Dimension, "sparse key indices must be unique and ascending");
    }
  }
}

ParameterSet apply_key(const ParameterSet& params, const SecretWeightKey& key) {
  check_key(params, key);
  ParameterSet out = params;
  Tensor& w = out.at_layer(key.layer_index).weights;
  for (std::size_t i = 0; i < key.values.size(); ++i) w[key.flat_index(i)] += key.values[i];
  return out;
}

Var apply_key(Var weights, const SecretWeightKey& key, Var values) {
  if (key.support == KeySupport::Dense) return add(weights, reshape(values, weights.shape()));
  return scatter_add(weights, key.indices, values);
}

namespace {

Var densified_key(Graph& g, const Shape& layer_shape, const SecretWeightKey& key, Var values) {
  if (key.support == KeySupport::Dense) return reshape(values, layer_shape);
  return scatter_add(g.constant(Tensor(layer_shape, 0.0f)), key.indices, values);
}

}  // namespace

Var cosine_pruning_loss(Var weights, const SecretWeightKey& key, Var values) {
  Graph& g = *weights.graph;
  const Var abs_w = abs(weights);
  const Var abs_d = abs(densified_key(g, weights.shape(), key, values));
  const Var nw = l2norm(abs_w);
  const Var nd = l2norm(abs_d);
  if (nw.value().item() == 0.0f) fail(ErrorKind::Numeric, "cosine pruning loss: target layer weights are all zero");
  if (nd.value().item() == 0.0f) fail(ErrorKind::Numeric, "cosine pruning loss: key is all zero");
  return neg(div(dot(abs_w, abs_d), mul(nw, nd)));
}

Tensor cosine_pruning_loss(const ParameterSet& params, const SecretWeightKey& key) {
  check_key(params, key);
  Graph g;
  const Var w = g.constant(params.at_layer(key.layer_index).weights);
  const Var v = g.constant(Tensor({static_cast<int>(key.values.size())}, key.values));
  return cosine_pruning_loss(w, key, v).value();
}

double key_cosine_similarity(const ParameterSet& params, const SecretWeightKey& key) {
  check_key(params, key);
  const Tensor& w = params.at_layer(key.layer_index).weights;
  const auto d = key.densify(w.numel());
  double num = 0.0, nw = 0.0, nd = 0.0;
  for (std::size_t i = 0; i < w.numel(); ++i) {
    const double a = std::fabs(static_cast<double>(w[i])), b = std::fabs(static_cast<double>(d[i]));
    num += a * b;
    nw += a * a;
    nd += b * b;
  }
  if (nw == 0.0 || nd == 0.0) fail(ErrorKind::Numeric, "cosine similarity of a zero vector");
  return num / (std::sqrt(nw) * std::sqrt(nd));
}

// DTKY layout (little-endian):
//   "DTKY" | u8 version | u32 layer_index | u8 support (0 dense, 1 sparse)
//   | u32 count | count × (u32 index, f32 value)  or  count × f32
//   | u32 CRC32 of all preceding bytes
namespace {
constexpr std::uint8_t kKeyVersion = 1;
}

std::vector<unsigned char> encode_key(const SecretWeightKey& key) {
  ByteWriter w;
  w.tag("DTKY");
  w.u8(kKeyVersion);
  w.u32(static_cast<std::uint32_t>(key.layer_index));
  w.u8(static_cast<std::uint8_t>(key.support));
  w.u32(static_cast<std::uint32_t>(key.values.size()));
  if (key.support == KeySupport::Sparse) {
    for (std::size_t i = 0; i < key.values.size(); ++i) {
      w.u32(key.indices[i]);
      w.f32(key.values[i]);
    }
  } else {
    w.f32s(key.values);
  }
  w.seal();
  return w.bytes();
}

SecretWeightKey decode_key(std::vector<unsigned char> bytes, const std::string& source) {
  ByteReader r(std::move(bytes), source);
  r.expect_tag("DTKY");
  if (const auto v = r.u8(); v != kKeyVersion) r.error("unsupported key version " + std::to_string(v));
  SecretWeightKey key;
  key.layer_index = static_cast<int>(r.u32());
  if (key.layer_index < 1) r.error("layer index must be at least 1");
  const auto kind = r.u8();
  if (kind > 1) r.error("unknown support kind " + std::to_string(kind));
  key.support = static_cast<KeySupport>(kind);
  const std::uint32_t count = r.u32();
  if (count == 0) r.error("empty key");
  const std::size_t per = key.support == KeySupport::Sparse ? 8 : 4;
  if (r.remaining() != per * count) r.error("payload size does not match " + std::to_string(count) + " entries");
  key.values.resize(count);
  if (key.support == KeySupport::Sparse) {
    key.indices.resize(count);
    for (std::uint32_t i = 0; i < count; ++i) {
      key.indices[i] = r.u32();
      if (i > 0 && key.indices[i] <= key.indices[i - 1]) r.error("sparse indices not strictly ascending");
      key.values[i] = r.f32();
    }
  } else {
    r.f32s(key.values);
  }
  r.finish();
  return key;
}

void key_save(const SecretWeightKey& key, const std::filesystem::path& path) {
  write_binary(path, encode_key(key));
}

SecretWeightKey key_load(const std::filesystem::path& path) {
  return decode_key(read_binary(path), path.string());
}

}  // namespace dormant
