#include "dglight/network_io.hpp"

#include "dglight/error.hpp"

#include <cmath>
#include <fstream>
#include <map>

namespace dglight {

using nlohmann::json;

namespace {

void check_header(const json& doc, const std::string& schema) {
  if (!doc.is_object() || doc.value("schema", "") != schema) {
    throw SchemaError("expected a '" + schema + "' document");
  }
  if (doc.value("version", "") != kNetworkSchemaVersion) {
    throw SchemaError(schema + ": unsupported version " + doc.value("version", std::string("?")));
  }
}

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

Direction heading_of(Vec2 from, Vec2 to) {
  const double dx = to.x - from.x;
  const double dy = to.y - from.y;
  if (std::abs(dx) >= std::abs(dy)) return dx >= 0.0 ? Direction::kEast : Direction::kWest;
  return dy >= 0.0 ? Direction::kNorth : Direction::kSouth;
}

Vec2 point(const json& p) { return {p.at("x").get<double>(), p.at("y").get<double>()}; }

}  // namespace

json network_to_json(const RoadNetwork& net) {
  json nodes = json::array();
  for (const Intersection& i : net.intersections()) {
    nodes.push_back({{"id", i.name}, {"row", i.row}, {"col", i.col}, {"virtual", i.is_virtual}});
  }
  json lanes = json::array();
  for (const Lane& l : net.lanes()) {
    lanes.push_back({{"id", l.name},
                     {"from", net.intersection(l.from).name},
                     {"to", net.intersection(l.to).name},
                     {"approach", direction_code(l.approach)},
                     {"movement", movement_name(l.movement)},
                     {"length", l.length}});
  }
  return {{"schema", "dglight.network"},
          {"version", kNetworkSchemaVersion},
          {"intersections", std::move(nodes)},
          {"lanes", std::move(lanes)}};
}

RoadNetwork network_from_json(const json& doc) {
  check_header(doc, "dglight.network");
  try {
    std::vector<Intersection> nodes;
    std::map<std::string, IntersectionId> ids;
    for (const json& j : doc.at("intersections")) {
      Intersection i;
      i.name = j.at("id").get<std::string>();
      i.row = j.value("row", 0);
      i.col = j.value("col", 0);
      i.is_virtual = j.value("virtual", false);
      ids[i.name] = static_cast<IntersectionId>(nodes.size());
      nodes.push_back(std::move(i));
    }
    std::vector<Lane> lanes;
    for (const json& j : doc.at("lanes")) {
      Lane l;
      l.name = j.at("id").get<std::string>();
      const auto from = ids.find(j.at("from").get<std::string>());
      const auto to = ids.find(j.at("to").get<std::string>());
      if (from == ids.end() || to == ids.end()) {
        throw SchemaError("network: lane " + l.name + " references an unknown intersection");
      }
      l.from = from->second;
      l.to = to->second;
      const auto approach = direction_from_code(j.at("approach").get<std::string>());
      const auto movement = movement_from_name(j.at("movement").get<std::string>());
      if (!approach || !movement) {
        throw SchemaError("network: lane " + l.name + " has a bad approach or movement");
      }
      l.approach = *approach;
      l.movement = *movement;
      l.length = j.at("length").get<double>();
      lanes.push_back(std::move(l));
    }
    return RoadNetwork::from_parts(std::move(nodes), std::move(lanes));
  } catch (const json::exception& e) {
    throw SchemaError(std::string("network: malformed document: ") + e.what());
  }
}

json flow_to_json(const RoadNetwork& net, const FlowSpec& flow) {
  json entries = json::array();
  for (const FlowEntry& e : flow.entries) {
    json route = json::array();
    for (LaneId l : e.route) route.push_back(net.lane(l).name);
    entries.push_back(
        {{"route", std::move(route)}, {"start", e.start}, {"end", e.end}, {"headway", e.headway}});
  }
  return {{"schema", "dglight.flow"}, {"version", kNetworkSchemaVersion}, {"entries", entries}};
}

FlowSpec flow_from_json(const RoadNetwork& net, const json& doc) {
  check_header(doc, "dglight.flow");
  FlowSpec flow;
  try {
    for (const json& j : doc.at("entries")) {
      FlowEntry e;
      for (const json& name : j.at("route")) {
        const LaneId id = net.find_lane(name.get<std::string>());
        if (id == kNoId) throw SchemaError("flow: unknown lane id " + name.dump());
        e.route.push_back(id);
      }
      e.start = j.at("start").get<double>();
      e.end = j.at("end").get<double>();
      e.headway = j.at("headway").get<double>();
      if (!(e.headway > 0.0) || e.start > e.end) {
        throw SchemaError("flow: entry with bad timing");
      }
      net.validate_route(e.route);
      flow.entries.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw SchemaError(std::string("flow: malformed document: ") + e.what());
  }
  return flow;
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw SchemaError(path.string() + " is not valid JSON: " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const json& doc) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << doc.dump(1) << '\n';
  if (!out) throw Error("write failed for " + path.string());
}

CityFlowImport import_cityflow(const json& roadnet, const json& flow_doc) {
  CityFlowImport result;
  try {
    std::vector<Intersection> nodes;
    std::map<std::string, IntersectionId> ids;
    bool saw_plan = false;
    for (const json& j : roadnet.at("intersections")) {
      Intersection i;
      i.name = j.at("id").get<std::string>();
      i.is_virtual = j.value("virtual", false);
      if (j.contains("point")) {
        const Vec2 p = point(j.at("point"));
        i.row = static_cast<int>(std::lround(-p.y));
        i.col = static_cast<int>(std::lround(p.x));
      }
      if (!i.is_virtual && j.contains("trafficLight")) saw_plan = true;
      ids[i.name] = static_cast<IntersectionId>(nodes.size());
      nodes.push_back(std::move(i));
    }
    if (saw_plan) {
      result.warnings.push_back("roadnet traffic-light plans are ignored; phases are fixed");
    }

    struct RoadInfo {
      IntersectionId from;
      IntersectionId to;
      Direction first_heading;
      Direction last_heading;
      std::vector<LaneId> lanes;  // through, left, right, or a single exit lane
    };
    std::map<std::string, RoadInfo> roads;
    std::vector<Lane> lanes;
    for (const json& j : roadnet.at("roads")) {
      const auto name = j.at("id").get<std::string>();
      const auto from = ids.find(j.at("startIntersection").get<std::string>());
      const auto to = ids.find(j.at("endIntersection").get<std::string>());
      if (from == ids.end() || to == ids.end()) {
        throw SchemaError("cityflow: road " + name + " references an unknown intersection");
      }
      std::vector<Vec2> pts;
      if (j.contains("points")) {
        for (const json& p : j.at("points")) pts.push_back(point(p));
      }
      if (pts.size() < 2) throw SchemaError("cityflow: road " + name + " needs at least two points");
      double length = 0.0;
      for (size_t k = 1; k < pts.size(); ++k) {
        length += std::hypot(pts[k].x - pts[k - 1].x, pts[k].y - pts[k - 1].y);
      }
      RoadInfo info{from->second, to->second, heading_of(pts[0], pts[1]),
                    heading_of(pts[pts.size() - 2], pts.back()), {}};
      const Direction approach = opposite(info.last_heading);
      if (nodes[info.to].is_virtual) {
        info.lanes.push_back(static_cast<LaneId>(lanes.size()));
        lanes.push_back(Lane{name + ":exit", info.from, info.to, approach, Movement::kThrough, length});
      } else {
        for (Movement m : kAllMovements) {
          info.lanes.push_back(static_cast<LaneId>(lanes.size()));
          lanes.push_back(
              Lane{name + ":" + std::string(movement_name(m)), info.from, info.to, approach, m, length});
        }
      }
      roads.emplace(name, std::move(info));
    }
    result.network = RoadNetwork::from_parts(std::move(nodes), std::move(lanes));

    bool saw_speed = false;
    for (const json& j : flow_doc) {
      if (j.contains("vehicle") && j.at("vehicle").contains("maxSpeed")) saw_speed = true;
      std::vector<std::string> road_names = j.at("route").get<std::vector<std::string>>();
      FlowEntry e;
      bool ok = !road_names.empty();
      for (size_t k = 0; ok && k < road_names.size(); ++k) {
        auto it = roads.find(road_names[k]);
        if (it == roads.end()) {
          throw SchemaError("cityflow: flow references unknown road " + road_names[k]);
        }
        const RoadInfo& road = it->second;
        if (k + 1 == road_names.size()) {
          if (!result.network.intersection(road.to).is_virtual) {
            result.warnings.push_back("flow route ending inside the network at " + road_names[k] +
                                      " was dropped");
            ok = false;
            break;
          }
          e.route.push_back(road.lanes.front());
          break;
        }
        const RoadInfo& next = roads.at(road_names[k + 1]);
        const Direction approach = opposite(road.last_heading);
        std::optional<Movement> turn;
        for (Movement m : kAllMovements) {
          if (exit_side(approach, m) == next.first_heading) turn = m;
        }
        if (!turn || road.lanes.size() != 3) {
          result.warnings.push_back("flow route with a U-turn or invalid turn at " + road_names[k] +
                                    " was dropped");
          ok = false;
          break;
        }
        e.route.push_back(road.lanes[static_cast<int>(*turn)]);
      }
      if (!ok) continue;
      e.headway = j.value("interval", 1.0);
      e.start = j.value("startTime", 0.0);
      e.end = j.value("endTime", e.start);
      if (e.end < 0.0) e.end = 3600.0;
      result.network.validate_route(e.route);
      result.flow.entries.push_back(std::move(e));
    }
    if (saw_speed) result.warnings.push_back("per-vehicle maxSpeed values are ignored");
  } catch (const json::exception& e) {
    throw SchemaError(std::string("cityflow: malformed input: ") + e.what());
  }
  return result;
}

}  // namespace dglight
