#pragma once

#include <cstdint>
#include <filesystem>
#include <algorithm>
#include <span>
#include <vector>

#include "tensor.hpp"

namespace dormant {

// Images N×C×H×W in [0,1] with their ground-truth labels.
struct Dataset {
  Tensor images;
  std::vector<int> labels;
  int num_classes = 10;

  std::size_t size() const noexcept { return labels.size(); }
  Shape sample_shape() const { return Shape(images.shape.begin() + 1, images.shape.end()); }
  std::size_t sample_numel() const { return images.numel() / std::max<std::size_t>(1, size()); }

  // Gathers the listed samples into a new dataset.
  Dataset subset(std::span<const std::size_t> indices) const;
  Dataset head(std::size_t n) const;
};

void check_dataset(const Dataset& ds);

struct TriggerSpec {
  int row = 0;
  int col = 0;
  int height = 3;
  int width = 3;
  float value = 1.0f;
  int target_class = 5;

  bool operator==(const TriggerSpec&) const = default;
};

void check_trigger(const TriggerSpec& trig, const Shape& sample_shape, int num_classes);

// Dataset whose images carry the trigger. `images.labels` keep the clean
// labels C_L; the target label is only used inside losses.
struct TrojanDataset {
  Dataset images;
  std::vector<std::size_t> source_indices;

  const std::vector<int>& original_labels() const { return images.labels; }
  std::size_t size() const noexcept { return images.size(); }
};

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

// Class-distinctive bar patterns plus seeded noise; the top-left 3×3 corner is
// kept dark so the default trigger is never present by accident.
Dataset make_synthetic(int num_classes, int samples_per_class, int image_size, std::uint64_t seed);

// Copy of `image` (C×H×W) with the patch set to trig.value on every channel.
Tensor paste_trigger(const Tensor& image, const TriggerSpec& trig);
// In-place variant over a flat C×H×W sample.
void paste_trigger_inplace(std::span<float> sample, const Shape& sample_shape, const TriggerSpec& trig);

// Pastes the trigger onto ⌊ratio·N⌋ samples chosen without replacement.
TrojanDataset make_trojan_set(const Dataset& clean, const TriggerSpec& trig, double ratio,
                              std::uint64_t seed);

// Every sample whose label differs from the target, triggered.
TrojanDataset make_triggered_test_set(const Dataset& test, const TriggerSpec& trig);

struct Batch {
  Tensor images;
  std::vector<int> labels;
  std::vector<std::size_t> indices;
};

// Seeded permutation split into batches of `batch_size`; the final partial
// batch is kept.
std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, std::size_t batch_size,
                                                    std::uint64_t shuffle_seed);
Batch gather(const Dataset& ds, std::span<const std::size_t> indices);
std::vector<Batch> batches(const Dataset& ds, std::size_t batch_size, std::uint64_t shuffle_seed);

}  // namespace dormant
