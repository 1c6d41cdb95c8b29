#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "nn.hpp"

namespace dormant {

struct Checkpoint {
  NetworkSpec spec;
  ParameterSet params;
};

nlohmann::json spec_to_json(const NetworkSpec& spec);
NetworkSpec spec_from_json(const nlohmann::json& j);

// DTNN layout (little-endian):
//   "DTNN" | u8 version | u32 header length | JSON header (network spec)
//   | per parameterized layer: weights f32 block, biases f32 block
//   | u32 CRC32 of all preceding bytes
std::vector<unsigned char> encode_checkpoint(const NetworkSpec& spec, const ParameterSet& params);
Checkpoint decode_checkpoint(std::vector<unsigned char> bytes, const std::string& source);

void checkpoint_save(const NetworkSpec& spec, const ParameterSet& params, const std::filesystem::path& path);
Checkpoint checkpoint_load(const std::filesystem::path& path);

}  // namespace dormant
