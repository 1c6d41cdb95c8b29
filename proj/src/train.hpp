#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "data.hpp"
#include "key.hpp"
#include "nn.hpp"

namespace dormant {

enum class OptimizerKind { Sgd, Adam };
enum class KeyMode { Fixed, Joint };

struct TrainConfig {
  int epochs = 100;
  int batch_size = 128;
  float learning_rate = 1e-3f;
  OptimizerKind optimizer = OptimizerKind::Adam;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float epsilon = 1e-8f;
  // Weights of the three dormant terms and of the cosine pruning loss.
  float lambda1 = 1.0f;
  float lambda2 = 1.0f;
  float lambda3 = 1.0f;
  float lambda4 = 0.0f;
  double poison_ratio = 0.1;
  std::uint64_t seed = 1;
  KeyMode key_mode = KeyMode::Joint;
  // Cosine decay of the learning rate from learning_rate to 0 over the run.
  bool cosine_decay = false;
};

void check_config(const TrainConfig& cfg);

struct Accuracy {
  double acc_c = 0;
  double acc_t = 0;
  std::size_t n_clean = 0;
  std::size_t n_triggered = 0;
};

// Per-epoch means over optimizer steps. Terms a regime does not use stay 0.
struct EpochLosses {
  int epoch = 0;
  double l1 = 0, t1 = 0, t2 = 0, t3 = 0, l3 = 0, total = 0;
  std::optional<Accuracy> dormant, awakened;  // end-of-epoch metrics, when requested
};

struct TrainReport {
  std::string mode;
  std::vector<EpochLosses> epochs;
  std::optional<Accuracy> dormant;    // metrics of θ
  std::optional<Accuracy> awakened;   // metrics of θ+δ (dormant mode only)
  double wall_seconds = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> warnings;
};

// Optional hooks and held-out data for a training run.
struct TrainOptions {
  const Dataset* clean_test = nullptr;
  const TrojanDataset* triggered_test = nullptr;
  int target_class = 5;
  // Evaluate on the held-out sets after every epoch, not only at the end.
  bool per_epoch_metrics = false;
  // Sees every batch exactly as it enters the clean cross-entropy term.
  std::function<void(const Tensor& images, const std::vector<int>& labels)> on_clean_batch;
  std::function<void(const EpochLosses&)> on_epoch;
};

struct TrainResult {
  ParameterSet params;
  TrainReport report;
};

struct DormantResult {
  ParameterSet params;
  SecretWeightKey key;
  TrainReport report;
};

// Mean cross-entropy of f(x; θ) against the clean labels.
Tensor loss_clean(const NetworkSpec& spec, const ParameterSet& params, const Tensor& images,
                  std::span<const int> labels);

// Triggered inputs with their clean labels, plus the attacker's target.
struct TrojanBatch {
  Tensor images;
  std::vector<int> original_labels;
  int target_class = 5;
};

// Graph pieces of one dormant step. `key_values` is the δ leaf.
struct DormantLossVars {
  Var l1, t1, t2, t3, l2, total;
  std::optional<Var> l3;
};

DormantLossVars build_dormant_loss(const NetworkSpec& spec, std::span<const LayerVars> theta,
                                   const SecretWeightKey& key, Var key_values, const Tensor& clean_images,
                                   std::span<const int> clean_labels, const TrojanBatch& trojan,
                                   const TrainConfig& cfg);

// λ1·T1 + λ2·T2 + λ3·T3.
Tensor loss_dormant(const NetworkSpec& spec, const ParameterSet& params, const SecretWeightKey& key,
                    const Tensor& clean_images, std::span<const int> clean_labels,
                    const TrojanBatch& trojan, const TrainConfig& cfg);

// L1 + L2 + λ4·L3.
Tensor total_dormant_loss(const NetworkSpec& spec, const ParameterSet& params, const SecretWeightKey& key,
                          const Tensor& clean_images, std::span<const int> clean_labels,
                          const TrojanBatch& trojan, const TrainConfig& cfg);

TrainResult train_standard(const NetworkSpec& spec, const Dataset& train, const TrainConfig& cfg,
                           const TrainOptions& opts = {});
TrainResult train_badnet(const NetworkSpec& spec, const Dataset& train, const TriggerSpec& trigger,
                         double poison_ratio, const TrainConfig& cfg, const TrainOptions& opts = {});
DormantResult train_dormant(const NetworkSpec& spec, const Dataset& train, const TriggerSpec& trigger,
                            const SecretWeightKey& key, const TrainConfig& cfg,
                            const TrainOptions& opts = {});

// acc_c over `clean_test`, acc_t = fraction of `triggered_test` predicted as
// `target_class`.
Accuracy evaluate(const NetworkSpec& spec, const ParameterSet& params, const Dataset& clean_test,
                  const TrojanDataset& triggered_test, int target_class);

std::vector<int> predict_dataset(const NetworkSpec& spec, const ParameterSet& params, const Dataset& ds);

// Sub-seed for a named purpose, so streams never collide.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t purpose);

}  // namespace dormant
