#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "data.hpp"
#include "detect.hpp"
#include "key.hpp"
#include "nn.hpp"
#include "prune.hpp"
#include "train.hpp"

namespace dormant {

struct IdxPaths {
  std::filesystem::path train_images, train_labels, test_images, test_labels;
};

struct SyntheticData {
  int num_classes = 10;
  int train_per_class = 60;
  int test_per_class = 20;
  int image_size = 14;
  std::uint64_t seed = 1;
};

struct KeyConfig {
  int layer = 2;
  KeySupport support = KeySupport::Sparse;
  std::size_t k = 1;
  std::uint64_t seed = 7;
  float scale = 0.5f;
};

struct DetectSettings {
  DetectConfig detect;
  std::size_t samples = 100;
};

struct CampaignSettings {
  std::vector<std::string> regimes{"std", "badnet", "dormant"};
  std::vector<double> extra_thresholds{-1.0};
  int workers = 1;
};

struct ExperimentConfig {
  std::optional<IdxPaths> idx;
  std::optional<SyntheticData> synthetic;
  NetworkSpec model;
  TrainConfig train;
  TriggerSpec trigger;
  KeyConfig key;
  DetectSettings detect;
  std::vector<double> prune_fractions{0.1, 0.3, 0.5, 0.7};
  PruneScope prune_scope = PruneScope::Global;
  CampaignSettings campaign;
  std::filesystem::path output_dir = "runs";
  nlohmann::json source;  // the parsed document, for hashing
};

// Strict parse: unknown keys, missing files and bad values raise config errors.
// Relative paths resolve against `base_dir`.
ExperimentConfig parse_experiment(const nlohmann::json& j, const std::filesystem::path& base_dir);
ExperimentConfig load_experiment(const std::filesystem::path& path);

// DT_OUTPUT_DIR, when set, replaces the configured output directory.
std::filesystem::path resolve_output_dir(const ExperimentConfig& cfg);

struct DataSplit {
  Dataset train;
  Dataset test;
};

DataSplit load_data(const ExperimentConfig& cfg);

// 8 hex digits of CRC32 over the canonical JSON dump.
std::string config_hash(const nlohmann::json& j);

struct TrainArtifacts {
  NetworkSpec spec;
  ParameterSet params;
  std::optional<SecretWeightKey> key;
  TrainReport report;
};

TrainArtifacts run_training(const ExperimentConfig& cfg, const std::string& mode, const DataSplit& data);

// Writes model.dtnn, key.dtky (dormant only), report.json and losses.csv.
// Refuses to overwrite artifacts produced by a different configuration.
void write_artifacts(const TrainArtifacts& art, const std::filesystem::path& dir, const std::string& hash);

struct CampaignRun {
  std::string regime;
  int run = 0;
  std::uint64_t seed = 0;
  std::optional<DetectionReport> report;
  std::string error;
  std::filesystem::path dir;
};

struct CampaignResult {
  std::vector<CampaignRun> runs;
  nlohmann::json summary;
  std::filesystem::path dir;
};

// Trains `runs` models per regime with seeds seed+0..runs−1, detects each,
// writes per-run verdict.json files and summary.json. Runs finished by an
// earlier invocation with the same configuration are reused.
CampaignResult run_campaign(const ExperimentConfig& cfg, int runs, const std::filesystem::path& out_root);

// Summary recomputed from the verdict files found under a campaign directory.
nlohmann::json recount_campaign(const std::filesystem::path& campaign_dir, double threshold, int target_class,
                                double mad_scale = 1.0);

}  // namespace dormant
