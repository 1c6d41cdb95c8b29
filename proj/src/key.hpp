#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "nn.hpp"
#include "tensor.hpp"

namespace dormant {

enum class KeySupport : std::uint8_t { Dense = 0, Sparse = 1 };

// Single-layer weight perturbation δ applied as W_layer += δ. Biases are
// never perturbed.
struct SecretWeightKey {
  int layer_index = 1;  // 1-based ordinal among parameterized layers
  KeySupport support = KeySupport::Sparse;
  std::vector<std::uint32_t> indices;  // sparse: ascending flat indices; dense: empty
  std::vector<float> values;           // one per support entry (dense: full flat size)

  std::size_t support_size() const { return values.size(); }
  std::uint32_t flat_index(std::size_t entry) const {
    return support == KeySupport::Dense ? static_cast<std::uint32_t>(entry) : indices[entry];
  }
  // δ expanded over the layer's `flat_size` weights, zeros off-support.
  std::vector<float> densify(std::size_t flat_size) const;
  bool is_zero() const;

  bool operator==(const SecretWeightKey&) const = default;
};

bool bitwise_equal(const SecretWeightKey& a, const SecretWeightKey& b);

inline constexpr float kDefaultKeyScale = 0.5f;

// k distinct flat indices of W_layer, values ~ U(−scale, scale).
SecretWeightKey new_sparse_key(const NetworkSpec& spec, int layer_index, std::size_t k,
                               std::uint64_t seed, float scale = kDefaultKeyScale);
SecretWeightKey new_dense_key(const NetworkSpec& spec, int layer_index, std::uint64_t seed,
                              float scale = kDefaultKeyScale);

void check_key(const ParameterSet& params, const SecretWeightKey& key);

ParameterSet apply_key(const ParameterSet& params, const SecretWeightKey& key);

// Graph form of W + δ; `values` is the trainable key-value leaf.
Var apply_key(Var weights, const SecretWeightKey& key, Var values);

// −⟨|W|,|δ|⟩ / (‖W‖·‖δ‖) over the key's layer; values in [−1, 0].
Var cosine_pruning_loss(Var weights, const SecretWeightKey& key, Var values);
Tensor cosine_pruning_loss(const ParameterSet& params, const SecretWeightKey& key);

// CosSim(|W_layer|, |δ|) as a plain number.
double key_cosine_similarity(const ParameterSet& params, const SecretWeightKey& key);

std::vector<unsigned char> encode_key(const SecretWeightKey& key);
SecretWeightKey decode_key(std::vector<unsigned char> bytes, const std::string& source = "key");
void key_save(const SecretWeightKey& key, const std::filesystem::path& path);
SecretWeightKey key_load(const std::filesystem::path& path);

}  // namespace dormant
