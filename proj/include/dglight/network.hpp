#pragma once

#include "dglight/phase.hpp"

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace dglight {

using IntersectionId = int;
using LaneId = int;
inline constexpr int kNoId = -1;

struct Intersection {
  std::string name;
  int row = 0;
  int col = 0;
  bool is_virtual = false;
  // Neighbour on each side, indexed by Direction; kNoId when absent.
  std::array<IntersectionId, 4> neighbor{kNoId, kNoId, kNoId, kNoId};
  // Incoming lanes by [approach][movement]; populated for real intersections.
  std::array<std::array<LaneId, 3>, 4> incoming{};

  LaneId incoming_lane(Direction approach, Movement m) const {
    return incoming[static_cast<int>(approach)][static_cast<int>(m)];
  }
  IntersectionId neighbor_on(Direction side) const { return neighbor[static_cast<int>(side)]; }

  bool operator==(const Intersection&) const = default;
};

// A lane carries vehicles from `from` to `to` and ends at the stop line of
// `to`. `approach` is the side of `to` it arrives on; `movement` is the turn
// its vehicles make at `to`. Lanes ending at a virtual intersection are exits.
struct Lane {
  std::string name;
  IntersectionId from = kNoId;
  IntersectionId to = kNoId;
  Direction approach = Direction::kNorth;
  Movement movement = Movement::kThrough;
  double length = 0.0;

  bool operator==(const Lane&) const = default;
};

class RoadNetwork {
 public:
  RoadNetwork() = default;

  // Validates and indexes an explicit intersection/lane list. Adjacency is
  // derived from lanes. Throws on any structural violation.
  static RoadNetwork from_parts(std::vector<Intersection> intersections, std::vector<Lane> lanes);

  // rows x cols real intersections surrounded by virtual boundary nodes.
  static RoadNetwork grid(int rows, int cols, double lane_length_m);

  const std::vector<Intersection>& intersections() const { return intersections_; }
  const std::vector<Lane>& lanes() const { return lanes_; }
  const Intersection& intersection(IntersectionId id) const;
  const Lane& lane(LaneId id) const;

  // Real intersections in id order.
  const std::vector<IntersectionId>& controlled() const { return controlled_; }
  bool is_exit(LaneId id) const { return intersection(lane(id).to).is_virtual; }

  IntersectionId find_intersection(const std::string& name) const;  // kNoId if absent
  LaneId find_lane(const std::string& name) const;                   // kNoId if absent

  // Lanes on the road leaving `from` toward its neighbour on `side`.
  std::span<const LaneId> road_lanes(IntersectionId from, Direction side) const;

  // Lane a vehicle enters after leaving `current`, given the movement it will
  // make at the next intersection. Returns the exit lane when the next
  // intersection is virtual.
  LaneId next_lane(LaneId current, Movement next_movement) const;

  std::vector<IntersectionId> real_neighbors(IntersectionId id) const;

  // Throws Error describing the first inconsistency in a route.
  void validate_route(std::span<const LaneId> route) const;

  bool operator==(const RoadNetwork& other) const {
    return intersections_ == other.intersections_ && lanes_ == other.lanes_;
  }

 private:
  void index();

  std::vector<Intersection> intersections_;
  std::vector<Lane> lanes_;
  std::vector<IntersectionId> controlled_;
  std::unordered_map<std::string, IntersectionId> intersection_by_name_;
  std::unordered_map<std::string, LaneId> lane_by_name_;
  // [intersection * 4 + side] -> lanes on that road
  std::vector<std::vector<LaneId>> roads_;
};

}  // namespace dglight
