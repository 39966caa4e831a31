#include "dglight/network.hpp"

#include "dglight/error.hpp"

#include <map>
#include <string>

namespace dglight {

namespace {

std::string node_name(int row, int col, bool is_virtual) {
  return std::string(is_virtual ? "v_" : "i_") + std::to_string(row) + "_" + std::to_string(col);
}

std::pair<int, int> step_toward(int row, int col, Direction side) {
  switch (side) {
    case Direction::kNorth: return {row - 1, col};
    case Direction::kSouth: return {row + 1, col};
    case Direction::kEast: return {row, col + 1};
    case Direction::kWest: return {row, col - 1};
  }
  return {row, col};
}

}  // namespace

const Intersection& RoadNetwork::intersection(IntersectionId id) const {
  if (id < 0 || static_cast<size_t>(id) >= intersections_.size()) {
    throw Error("network: unknown intersection id " + std::to_string(id));
  }
  return intersections_[id];
}

const Lane& RoadNetwork::lane(LaneId id) const {
  if (id < 0 || static_cast<size_t>(id) >= lanes_.size()) {
    throw Error("network: unknown lane id " + std::to_string(id));
  }
  return lanes_[id];
}

IntersectionId RoadNetwork::find_intersection(const std::string& name) const {
  auto it = intersection_by_name_.find(name);
  return it == intersection_by_name_.end() ? kNoId : it->second;
}

LaneId RoadNetwork::find_lane(const std::string& name) const {
  auto it = lane_by_name_.find(name);
  return it == lane_by_name_.end() ? kNoId : it->second;
}

std::span<const LaneId> RoadNetwork::road_lanes(IntersectionId from, Direction side) const {
  intersection(from);
  return roads_[static_cast<size_t>(from) * 4 + static_cast<size_t>(side)];
}

LaneId RoadNetwork::next_lane(LaneId current, Movement next_movement) const {
  const Lane& l = lane(current);
  const Intersection& at = intersection(l.to);
  if (at.is_virtual) throw Error("network: lane " + l.name + " is an exit lane");
  const Direction side = exit_side(l.approach, l.movement);
  const IntersectionId next = at.neighbor_on(side);
  if (next == kNoId) throw Error("network: lane " + l.name + " leads nowhere");
  if (intersection(next).is_virtual) {
    auto lanes = road_lanes(l.to, side);
    if (lanes.empty()) throw Error("network: no exit lane after " + l.name);
    return lanes.front();
  }
  return intersection(next).incoming_lane(opposite(side), next_movement);
}

std::vector<IntersectionId> RoadNetwork::real_neighbors(IntersectionId id) const {
  std::vector<IntersectionId> out;
  for (IntersectionId n : intersection(id).neighbor) {
    if (n != kNoId && !intersections_[n].is_virtual) out.push_back(n);
  }
  return out;
}

void RoadNetwork::validate_route(std::span<const LaneId> route) const {
  if (route.empty()) throw Error("route: empty");
  for (LaneId id : route) {
    if (id < 0 || static_cast<size_t>(id) >= lanes_.size()) {
      throw Error("route: unknown lane id " + std::to_string(id));
    }
  }
  if (!intersection(lane(route.front()).from).is_virtual) {
    throw Error("route: first lane " + lane(route.front()).name + " does not start at the boundary");
  }
  for (size_t k = 0; k + 1 < route.size(); ++k) {
    const Lane& a = lane(route[k]);
    const Lane& b = lane(route[k + 1]);
    if (intersection(a.to).is_virtual) {
      throw Error("route: exit lane " + a.name + " is not the last lane");
    }
    if (a.to != b.from) throw Error("route: lane " + b.name + " does not continue " + a.name);
    if (b.approach != opposite(exit_side(a.approach, a.movement))) {
      throw Error("route: lane " + b.name + " is not reachable by the " +
                  std::string(movement_name(a.movement)) + " movement of " + a.name);
    }
  }
  if (!intersection(lane(route.back()).to).is_virtual) {
    throw Error("route: last lane " + lane(route.back()).name + " does not leave the network");
  }
}

void RoadNetwork::index() {
  controlled_.clear();
  intersection_by_name_.clear();
  lane_by_name_.clear();
  roads_.assign(intersections_.size() * 4, {});
  for (IntersectionId i = 0; i < static_cast<IntersectionId>(intersections_.size()); ++i) {
    if (!intersection_by_name_.emplace(intersections_[i].name, i).second) {
      throw Error("network: duplicate intersection " + intersections_[i].name);
    }
    if (!intersections_[i].is_virtual) controlled_.push_back(i);
  }
  for (LaneId l = 0; l < static_cast<LaneId>(lanes_.size()); ++l) {
    const Lane& lane = lanes_[l];
    if (!lane_by_name_.emplace(lane.name, l).second) {
      throw Error("network: duplicate lane " + lane.name);
    }
    // lane arrives on side `approach` of `to`, so it leaves `from` on the
    // opposite side
    roads_[static_cast<size_t>(lane.from) * 4 + static_cast<size_t>(opposite(lane.approach))]
        .push_back(l);
  }
}

RoadNetwork RoadNetwork::from_parts(std::vector<Intersection> intersections,
                                    std::vector<Lane> lanes) {
  const auto n = static_cast<IntersectionId>(intersections.size());
  for (Intersection& node : intersections) {
    node.neighbor.fill(kNoId);
    for (auto& a : node.incoming) a.fill(kNoId);
  }
  for (const Lane& lane : lanes) {
    if (lane.from < 0 || lane.from >= n || lane.to < 0 || lane.to >= n || lane.from == lane.to) {
      throw Error("network: lane " + lane.name + " has invalid endpoints");
    }
    if (!(lane.length > 0.0)) throw Error("network: lane " + lane.name + " has non-positive length");
    Intersection& to = intersections[lane.to];
    const auto side = static_cast<int>(lane.approach);
    if (to.neighbor[side] != kNoId && to.neighbor[side] != lane.from) {
      throw Error("network: two different neighbours on one side of " + to.name);
    }
    to.neighbor[side] = lane.from;
    if (!to.is_virtual) {
      LaneId& slot = to.incoming[side][static_cast<int>(lane.movement)];
      if (slot != kNoId) throw Error("network: duplicate movement lane into " + to.name);
      slot = static_cast<LaneId>(&lane - lanes.data());
    }
  }
  for (IntersectionId i = 0; i < n; ++i) {
    const Intersection& node = intersections[i];
    for (Direction d : kAllDirections) {
      const IntersectionId j = node.neighbor_on(d);
      if (j == kNoId) continue;
      if (intersections[j].neighbor_on(opposite(d)) != i) {
        throw Error("network: adjacency between " + node.name + " and " + intersections[j].name +
                    " is not symmetric");
      }
    }
    if (node.is_virtual) continue;
    for (Direction d : kAllDirections) {
      for (Movement m : kAllMovements) {
        if (node.incoming_lane(d, m) == kNoId) {
          throw Error("network: " + node.name + " lacks the " + std::string(movement_name(m)) +
                      " lane from the " + std::string(direction_name(d)));
        }
      }
    }
  }
  RoadNetwork net;
  net.intersections_ = std::move(intersections);
  net.lanes_ = std::move(lanes);
  net.index();
  return net;
}

RoadNetwork RoadNetwork::grid(int rows, int cols, double lane_length_m) {
  if (rows < 1 || cols < 1) throw Error("grid: rows and cols must be >= 1");
  if (!(lane_length_m > 0.0)) throw Error("grid: lane length must be positive");

  std::vector<Intersection> nodes;
  std::map<std::pair<int, int>, IntersectionId> at;
  auto add = [&](int r, int c, bool is_virtual) {
    Intersection node;
    node.name = node_name(r, c, is_virtual);
    node.row = r;
    node.col = c;
    node.is_virtual = is_virtual;
    at[{r, c}] = static_cast<IntersectionId>(nodes.size());
    nodes.push_back(std::move(node));
  };
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) add(r, c, false);
  }
  for (int c = 0; c < cols; ++c) add(-1, c, true);
  for (int c = 0; c < cols; ++c) add(rows, c, true);
  for (int r = 0; r < rows; ++r) add(r, -1, true);
  for (int r = 0; r < rows; ++r) add(r, cols, true);

  std::vector<Lane> lanes;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const IntersectionId self = at.at({r, c});
      for (Direction side : kAllDirections) {
        const auto [nr, nc] = step_toward(r, c, side);
        const IntersectionId other = at.at({nr, nc});
        for (Movement m : kAllMovements) {
          lanes.push_back(Lane{nodes[other].name + ">" + nodes[self].name + ":" +
                                   std::string(movement_name(m)),
                               other, self, side, m, lane_length_m});
        }
        if (nodes[other].is_virtual) {
          lanes.push_back(Lane{nodes[self].name + ">" + nodes[other].name + ":exit", self, other,
                               opposite(side), Movement::kThrough, lane_length_m});
        }
      }
    }
  }
  return from_parts(std::move(nodes), std::move(lanes));
}

}  // namespace dglight
