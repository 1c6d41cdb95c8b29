#include "checkpoint.hpp"

#include "bytes.hpp"
#include "errors.hpp"

namespace dormant {

namespace {
constexpr std::uint8_t kCheckpointVersion = 1;
}

nlohmann::json spec_to_json(const NetworkSpec& spec) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : spec.layers) layers.push_back({{"kind", to_string(l.kind)}, {"dims", l.dims}});
  return {{"layers", layers}, {"input_shape", spec.input_shape}, {"num_classes", spec.num_classes}};
}

NetworkSpec spec_from_json(const nlohmann::json& j) {
  NetworkSpec spec;
  try {
    for (const auto& l : j.at("layers")) {
      for (const auto& [k, _] : l.items()) {
        if (k != "kind" && k != "dims") fail(ErrorKind::Spec, "unknown layer field '" + k + "'");
      }
      spec.layers.push_back({layer_kind_from_string(l.at("kind").get<std::string>()),
                             l.value("dims", std::vector<int>{})});
    }
    spec.input_shape = j.at("input_shape").get<Shape>();
    spec.num_classes = j.at("num_classes").get<int>();
    for (const auto& [k, _] : j.items()) {
      if (k != "layers" && k != "input_shape" && k != "num_classes") {
        fail(ErrorKind::Spec, "unknown network field '" + k + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Spec, std::string("malformed network description: ") + e.what());
  }
  validate(spec);
  return spec;
}

std::vector<unsigned char> encode_checkpoint(const NetworkSpec& spec, const ParameterSet& params) {
  check_compatible(spec, params);
  const std::string header = spec_to_json(spec).dump();
  ByteWriter w;
  w.tag("DTNN");
  w.u8(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(header.size()));
  w.raw({reinterpret_cast<const unsigned char*>(header.data()), header.size()});
  for (const auto& e : params.entries) {
    w.f32s(e.weights.data);
    w.f32s(e.biases.data);
  }
  w.seal();
  return w.bytes();
}

Checkpoint decode_checkpoint(std::vector<unsigned char> bytes, const std::string& source) {
  ByteReader r(std::move(bytes), source);
  r.expect_tag("DTNN");
  if (const auto v = r.u8(); v != kCheckpointVersion) r.error("unsupported checkpoint version " + std::to_string(v));
  const std::uint32_t header_len = r.u32();
  if (header_len > r.remaining()) r.error("header length " + std::to_string(header_len) + " exceeds file");
  const std::size_t header_at = r.offset();
  const std::string header = r.str(header_len);
  Checkpoint ck;
  try {
    ck.spec = spec_from_json(nlohmann::json::parse(header));
  } catch (const nlohmann::json::exception& e) {
    r.error("header at offset " + std::to_string(header_at) + " is not valid JSON: " + e.what());
  } catch (const Error& e) {
    r.error(std::string("bad header: ") + e.what());
  }
  // Zero-initialized layout from the spec, then filled from the payload.
  ck.params = init_params(ck.spec, 0);
  std::size_t expected = 0;
  for (const auto& e : ck.params.entries) expected += (e.weights.numel() + e.biases.numel()) * sizeof(float);
  if (r.remaining() != expected) {
    r.error("payload holds " + std::to_string(r.remaining()) + " bytes but the header implies " +
            std::to_string(expected));
  }
  for (auto& e : ck.params.entries) {
    r.f32s(e.weights.data);
    r.f32s(e.biases.data);
  }
  r.finish();
  return ck;
}

void checkpoint_save(const NetworkSpec& spec, const ParameterSet& params, const std::filesystem::path& path) {
  write_binary(path, encode_checkpoint(spec, params));
}

Checkpoint checkpoint_load(const std::filesystem::path& path) {
  return decode_checkpoint(read_binary(path), path.string());
}

}  // namespace dormant
