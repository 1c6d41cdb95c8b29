#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "data.hpp"
#include "nn.hpp"

namespace dormant {

// Mask-and-pattern trigger recovered for one candidate target class.
struct ReversedTrigger {
  Tensor mask;     // H×W in [0,1]
  Tensor pattern;  // C×H×W in [0,1]
  int target_class = 0;
  double l1_norm = 0;
  double attack_success = 0;
  double objective = 0;  // best observed objective
};

struct ReverseConfig {
  float reg_weight = 0.2f;
  int steps = 500;
  float learning_rate = 0.1f;  // Adam
  std::uint64_t seed = 0;
};

// Minimizes mean CE(f((1−m)⊙x + m⊙p), target) + reg_weight·‖m‖₁ over (m, p)
// with m = (tanh(a)+1)/2, p = (tanh(b)+1)/2. Returns the best iterate seen.
ReversedTrigger reverse_trigger(const NetworkSpec& spec, const ParameterSet& params, const Dataset& samples,
                                int target_class, const ReverseConfig& cfg);

// (norm_c − median) / (scale · median|norm − median|). scale = 1 is the
// plain ratio; 1.4826 makes the MAD a consistent σ estimate.
std::vector<double> anomaly_indices(const std::vector<double>& norms, double mad_scale = 1.0);

double median(std::vector<double> values);

struct DetectConfig {
  float reg_weight = 0.2f;
  int steps = 500;
  float learning_rate = 0.1f;
  double threshold = -2.0;
  std::uint64_t seed = 0;
  double mad_scale = 1.0;
  int workers = 1;
};

struct DetectionReport {
  std::vector<double> norms;
  std::vector<double> indices;         // empty when degenerate
  std::vector<double> attack_success;  // per class, of the recovered trigger
  double min_index = 0;
  int min_class = -1;
  double threshold = -2.0;
  bool trojan = false;      // verdict; the flagged class is min_class
  bool degenerate = false;  // MAD was zero, verdict forced to clean
};

// Verdict from per-class norms alone.
DetectionReport assess_norms(const std::vector<double>& norms, double threshold, double mad_scale = 1.0);

DetectionReport detect(const NetworkSpec& spec, const ParameterSet& params, const Dataset& samples,
                       const DetectConfig& cfg, std::vector<ReversedTrigger>* triggers = nullptr);

enum class ModelKind { Clean, BadNet, Dormant };

struct TrueKind {
  ModelKind kind = ModelKind::Clean;
  int target_class = 5;
};

// Clean population: fraction flagged as trojan (any class). Backdoored
// population: fraction judged clean or attributed to the wrong class.
double population_rates(const std::vector<DetectionReport>& reports, TrueKind truth);

}  // namespace dormant
