#pragma once

// File formats for networks and demand.
//
// Native network (schema "dglight.network", version "1"):
//   {"schema": "dglight.network", "version": "1",
//    "intersections": [{"id": str, "row": int, "col": int, "virtual": bool}],
//    "lanes": [{"id": str, "from": str, "to": str, "approach": "N|S|E|W",
//               "movement": "through|left|right", "length": metres}]}
//
// Native flow (schema "dglight.flow", version "1"):
//   {"schema": "dglight.flow", "version": "1",
//    "entries": [{"route": [lane id, ...], "start": s, "end": s, "headway": s}]}
//
// The CityFlow importer reads the subset of roadnet/flow files that maps onto
// this model: four-approach intersections, one lane per movement.

#include "dglight/network.hpp"
#include "dglight/simulator.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace dglight {

inline constexpr const char* kNetworkSchemaVersion = "1";

nlohmann::json network_to_json(const RoadNetwork& net);
RoadNetwork network_from_json(const nlohmann::json& doc);
nlohmann::json flow_to_json(const RoadNetwork& net, const FlowSpec& flow);
FlowSpec flow_from_json(const RoadNetwork& net, const nlohmann::json& doc);

nlohmann::json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const nlohmann::json& doc);

struct CityFlowImport {
  RoadNetwork network;
  FlowSpec flow;
  std::vector<std::string> warnings;
};

CityFlowImport import_cityflow(const nlohmann::json& roadnet, const nlohmann::json& flow);

}  // namespace dglight
