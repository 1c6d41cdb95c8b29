#include "prune.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "errors.hpp"
#include "train.hpp"

namespace dormant {

namespace {

struct Slot {
  std::size_t entry;
  std::size_t index;
};

void check_fraction(double fraction) {
  if (!(fraction >= 0.0 && fraction < 1.0)) {
    fail(ErrorKind::Parameter, "prune fraction " + std::to_string(fraction) + " outside [0, 1)");
  }
}

// Zeroes the `count` smallest-|w| slots; stable sort keeps (layer, index) order on ties.
void prune_slots(ParameterSet& out, std::vector<Slot> slots, std::size_t count) {
  auto magnitude = [&](const Slot& s) { return std::fabs(out.entries[s.entry].weights[s.index]); };
  std::stable_sort(slots.begin(), slots.end(),
                   [&](const Slot& a, const Slot& b) { return magnitude(a) < magnitude(b); });
  for (std::size_t i = 0; i < count; ++i) out.entries[slots[i].entry].weights[slots[i].index] = 0.0f;
}

std::vector<Slot> layer_slots(const ParameterSet& p, std::size_t entry) {
  std::vector<Slot> slots;
  for (std::size_t i = 0; i < p.entries[entry].weights.numel(); ++i) slots.push_back({entry, i});
  return slots;
}

}  // namespace

ParameterSet magnitude_prune(const ParameterSet& params, double fraction, PruneScope scope) {
  check_fraction(fraction);
  ParameterSet out = params;
  if (fraction == 0.0) return out;
  if (scope == PruneScope::Global) {
    std::vector<Slot> all;
    for (std::size_t e = 0; e < out.entries.size(); ++e) {
      const auto s = layer_slots(out, e);
      all.insert(all.end(), s.begin(), s.end());
    }
    const auto count = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(all.size())));
    prune_slots(out, std::move(all), count);
  } else {
    for (std::size_t e = 0; e < out.entries.size(); ++e) {
      auto s = layer_slots(out, e);
      const auto count = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(s.size())));
      prune_slots(out, std::move(s), count);
    }
  }
  return out;
}

double key_support_survival(const ParameterSet& original, const ParameterSet& pruned, const SecretWeightKey& key) {
  check_key(original, key);
  const Tensor& before = original.at_layer(key.layer_index).weights;
  const Tensor& after = pruned.at_layer(key.layer_index).weights;
  std::size_t kept = 0, total = 0;
  for (std::size_t i = 0; i < key.support_size(); ++i) {
    const std::uint32_t idx = key.flat_index(i);
    ++total;
    // A weight that was already exactly zero cannot be told apart from a pruned one.
    kept += (after[idx] != 0.0f || before[idx] == 0.0f) ? 1 : 0;
  }
  return static_cast<double>(kept) / static_cast<double>(total);
}

PruneCurve prune_resistance_curve(const NetworkSpec& spec, const ParameterSet& params, const SecretWeightKey& key,
                                  const Dataset& clean_test, const TrojanDataset& triggered_test, int target_class,
                                  const std::vector<double>& fractions, PruneScope scope) {
  check_compatible(spec, params);
  check_key(params, key);
  if (fractions.empty()) fail(ErrorKind::Parameter, "no prune fractions given");
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    check_fraction(fractions[i]);
    if (i > 0 && fractions[i] <= fractions[i - 1]) fail(ErrorKind::Parameter, "prune fractions must be strictly increasing");
  }
  PruneCurve curve;
  for (double f : fractions) {
    const ParameterSet pruned = magnitude_prune(params, f, scope);
    const Accuracy acc = evaluate(spec, apply_key(pruned, key), clean_test, triggered_test, target_class);
    curve.points.push_back({f, acc.acc_c, acc.acc_t, key_support_survival(params, pruned, key)});
  }
  return curve;
}

std::string prune_curve_csv(const PruneCurve& curve) {
  std::string out = "fraction,acc_c,acc_t,survival\n";
  char line[128];
  for (const auto& p : curve.points) {
    std::snprintf(line, sizeof line, "%.17g,%.17g,%.17g,%.17g\n", p.fraction, p.acc_c, p.acc_t, p.survival);
    out += line;
  }
  return out;
}

}  // namespace dormant
