#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "data.hpp"

namespace fixture {

namespace fs = std::filesystem;

inline fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dt_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

inline void put_u32(std::ofstream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

// Writes a single-channel dataset as an IDX image/label pair.
inline void write_idx(const dormant::Dataset& ds, const fs::path& images, const fs::path& labels) {
  const auto shape = ds.sample_shape();
  std::ofstream img(images, std::ios::binary), lab(labels, std::ios::binary);
  put_u32(img, 0x803);
  put_u32(img, static_cast<std::uint32_t>(ds.size()));
  put_u32(img, static_cast<std::uint32_t>(shape[1]));
  put_u32(img, static_cast<std::uint32_t>(shape[2]));
  for (float v : ds.images.data) img.put(static_cast<char>(static_cast<unsigned char>(v * 255.0f + 0.5f)));
  put_u32(lab, 0x801);
  put_u32(lab, static_cast<std::uint32_t>(ds.size()));
  for (int l : ds.labels) lab.put(static_cast<char>(l));
}

inline nlohmann::json synthetic_config() {
  return nlohmann::json::parse(R"({
    "data": {"kind": "synthetic", "num_classes": 4, "train_per_class": 40, "test_per_class": 10,
             "image_size": 8, "seed": 3},
    "model": {"layers": [{"kind": "flatten", "dims": []}, {"kind": "dense", "dims": [64, 16]},
                         {"kind": "relu", "dims": []}, {"kind": "dense", "dims": [16, 4]}],
              "input_shape": [1, 8, 8], "num_classes": 4},
    "train": {"epochs": 2, "batch_size": 32, "learning_rate": 0.01, "seed": 1},
    "trigger": {"target_class": 1},
    "key": {"layer": 1, "support": "sparse", "k": 4},
    "detect": {"steps": 5, "samples": 8, "threshold": -2},
    "campaign": {"regimes": ["std", "badnet"], "extra_thresholds": [-1, 0.5]}
  })");
}

inline fs::path write_config(const fs::path& dir, const nlohmann::json& j) {
  const fs::path p = dir / "config.json";
  std::ofstream(p) << j.dump(2);
  return p;
}

inline std::vector<unsigned char> read_all(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace fixture
