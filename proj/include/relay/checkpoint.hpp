#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "relay/model.hpp"

namespace relay {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedArray {
  std::string name;
  std::vector<std::int64_t> shape;
  std::vector<float> data;
};

/// Decoded `RMDM` container: the JSON header (config, meta, manifest) and the
/// arrays in manifest order.
struct Container {
  nlohmann::json header;
  std::vector<NamedArray> arrays;

  const NamedArray* find(const std::string& name) const;
};

/// Layout: "RMDM", u32 version, u64 header byte length, UTF-8 JSON header,
/// then raw little-endian float32 arrays at the manifest offsets. Written to a
/// temporary name and renamed into place.
void write_container(const std::string& path, const nlohmann::json& config,
                     const nlohmann::json& meta, const std::vector<NamedArray>& arrays);
Container read_container(const std::string& path);

nlohmann::json config_to_json(const ModelConfig& cfg);
ModelConfig config_from_json(const nlohmann::json& j);

std::vector<NamedArray> model_arrays(const ModelParams<float>& p, const std::string& prefix = "");
/// Rebuilds parameters for `cfg` from the arrays named `prefix + tensor name`.
/// Throws ShapeError on a missing array or a shape disagreement.
ModelParams<float> params_from_arrays(const ModelConfig& cfg, const Container& c,
                                      const std::string& prefix = "");

void save_checkpoint(const std::string& path, const ModelParams<float>& p,
                     const nlohmann::json& meta = nlohmann::json::object());

struct LoadedCheckpoint {
  ModelParams<float> params;
  nlohmann::json meta;
};

/// Loads a checkpoint. When `expected` is given, its tying and relay flags must
/// match the stored config exactly (ConfigError otherwise).
LoadedCheckpoint load_checkpoint(const std::string& path, const ModelConfig* expected = nullptr);

}  // namespace relay
