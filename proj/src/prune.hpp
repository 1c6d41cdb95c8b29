#pragma once

#include <vector>

#include "data.hpp"
#include "key.hpp"
#include "nn.hpp"

namespace dormant {

enum class PruneScope { Global, PerLayer };

// Zeroes the ⌊fraction·total⌋ smallest-magnitude weights. Global scope ranks
// all weight tensors together; per-layer scope prunes each layer by the same
// fraction. Ties go to the earlier (layer, flat index). Biases are untouched.
ParameterSet magnitude_prune(const ParameterSet& params, double fraction, PruneScope scope = PruneScope::Global);

struct PrunePoint {
  double fraction = 0;
  double acc_c = 0;
  double acc_t = 0;
  double survival = 0;  // share of key support whose θ weight is still nonzero after pruning
};

struct PruneCurve {
  std::vector<PrunePoint> points;
};

// For each fraction: prune θ, add δ to the pruned weights, evaluate.
PruneCurve prune_resistance_curve(const NetworkSpec& spec, const ParameterSet& params, const SecretWeightKey& key,
                                  const Dataset& clean_test, const TrojanDataset& triggered_test, int target_class,
                                  const std::vector<double>& fractions, PruneScope scope = PruneScope::Global);

// Share of key support positions left unpruned in `pruned` relative to `original`.
double key_support_survival(const ParameterSet& original, const ParameterSet& pruned, const SecretWeightKey& key);

std::string prune_curve_csv(const PruneCurve& curve);

}  // namespace dormant
