#pragma once

// Checkpoint container: a flat binary file of (name, shape, float32 LE data)
// records plus a JSON sidecar (<path>.json) carrying the ModelSpec and any
// training metadata.
//
// Binary layout (all integers little-endian):
//   magic      8 bytes  "SNCKPT01"
//   count      u32
//   per record:
//     name_len u32, name bytes
//     rank     u32, dims u64 x rank
//     values   f32 x prod(dims)

#include <filesystem>
#include <string>

#include "json.hpp"

#include "sharpnoise/model.hpp"

namespace sharpnoise {

struct Checkpoint {
  Model model;
  nlohmann::json metadata;
};

void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const nlohmann::json& metadata = nlohmann::json::object());

// Rebuilds the model from the sidecar spec and overwrites every tensor by
// name. Missing/extra records or shape differences raise ConfigError.
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::filesystem::path sidecar_path(const std::filesystem::path& path);

}  // namespace sharpnoise
