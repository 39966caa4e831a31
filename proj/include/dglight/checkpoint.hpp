#pragma once

#include "dglight/tensor.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>

namespace dglight {

inline constexpr const char* kCheckpointSchemaVersion = "1";

// Parameter file layout:
//   {"schema_version": "1",
//    "parameters": [{"name": ..., "shape": [rows, cols], "values": [row-major]}],
//    "metadata": {...}}
// Decimal values are written with round-trip precision.
struct Checkpoint {
  ParamMap params;
  nlohmann::json metadata = nlohmann::json::object();
};

nlohmann::json checkpoint_to_json(const Checkpoint& ckpt);
Checkpoint checkpoint_from_json(const nlohmann::json& doc);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dglight
