#pragma once

// Deterministic 1 Hz microscopic simulator for signalised grid networks.
//
// Vehicles are points on single-file lanes. Every tick each vehicle advances
// by min(free_speed * dt, gap to its leader's previous position minus
// vehicle length and minimum gap, distance to the stop line when its movement
// is not released). Leaders are read from the previous tick, so a standing
// queue discharges one vehicle per tick at most and the start-up wave
// propagates backwards one vehicle per tick. Right turns are always released.

#include "dglight/network.hpp"
#include "dglight/phase.hpp"

#include <array>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <vector>

namespace dglight {

struct FlowEntry {
  std::vector<LaneId> route;
  double start = 0.0;
  double end = 0.0;
  double headway = 1.0;

  bool operator==(const FlowEntry&) const = default;
};

struct FlowSpec {
  std::vector<FlowEntry> entries;

  bool operator==(const FlowSpec&) const = default;
};

struct SimParams {
  double free_speed = 11.0;     // m/s
  double min_gap = 2.5;         // m
  double vehicle_length = 5.0;  // m
  double queue_speed = 0.1;     // vehicles slower than this are queued
  int green_s = 30;
  int yellow_s = 3;
  int all_red_s = 2;

  bool operator==(const SimParams&) const = default;
};

struct Vehicle {
  int id = 0;
  int route = 0;           // index into SimState::routes()
  int route_index = 0;     // current lane = routes()[route][route_index]
  bool in_network = false; // false while waiting at a saturated entry
  double position = 0.0;   // metres from lane start
  double speed = 0.0;      // m/s over the last tick
  double enter_time = 0.0;
  std::optional<double> exit_time;
  double cumulative_wait = 0.0;

  bool operator==(const Vehicle&) const = default;
};

enum class Stage : std::uint8_t { kGreen, kYellow, kAllRed };

struct PhaseProgram {
  Phase current = Phase::kETWT;
  Stage stage = Stage::kGreen;
  int remaining = 30;
  std::optional<Phase> pending;

  bool at_boundary() const { return stage == Stage::kGreen && remaining <= 0; }
  bool releases(Direction approach, Movement m) const {
    return m == Movement::kRight || (stage == Stage::kGreen && phase_permits(current, approach, m));
  }
  bool operator==(const PhaseProgram&) const = default;
};

struct LaneCounts {
  int queued = 0;
  std::array<int, 3> segments{};  // segment 1 nearest the stop line

  bool operator==(const LaneCounts&) const = default;
};

struct NeighborTotals {
  // Vehicles on the neighbour's lanes heading here, per approach of the
  // phase; nullopt when the neighbour is virtual.
  std::array<std::optional<int>, 2> incoming;
  int known_total = 0;
  int available = 0;

  bool operator==(const NeighborTotals&) const = default;
};

struct IntersectionObservation {
  IntersectionId intersection = kNoId;
  Phase current = Phase::kETWT;
  // Slot 2 * phase + side (see kControlledLanes).
  std::array<LaneCounts, kControlledLanes> lanes{};
  std::array<NeighborTotals, kNumPhases> neighbors{};

  const LaneCounts& lane(Phase p, int side) const { return lanes[2 * index_of(p) + side]; }
  LaneCounts& lane(Phase p, int side) { return lanes[2 * index_of(p) + side]; }

  bool operator==(const IntersectionObservation&) const = default;
};

struct MetricsReport {
  double att = 0.0;  // average travel time, s
  double aql = 0.0;  // average queued vehicles in the network
  double awt = 0.0;  // average waiting time per entered vehicle, s

  bool operator==(const MetricsReport&) const = default;
};

using JointAction = std::map<IntersectionId, Phase>;

class SimState {
 public:
  SimState(std::shared_ptr<const RoadNetwork> network, FlowSpec flow, SimParams params = {},
           std::uint64_t seed = 0);

  const RoadNetwork& network() const { return *network_; }
  std::shared_ptr<const RoadNetwork> network_ptr() const { return network_; }
  const FlowSpec& flow() const { return flow_; }
  const SimParams& params() const { return params_; }
  std::uint64_t seed() const { return seed_; }
  double clock() const { return static_cast<double>(clock_); }

  const std::vector<Vehicle>& vehicles() const { return vehicles_; }
  const std::vector<std::vector<LaneId>>& routes() const { return routes_; }
  // Vehicles on a lane, nearest the stop line first.
  const std::deque<int>& lane_vehicles(LaneId lane) const { return lanes_.at(lane); }
  const PhaseProgram& program(IntersectionId id) const;

  std::size_t entered() const { return vehicles_.size(); }
  std::size_t departed() const { return departed_; }
  std::size_t active() const;

  // Places a vehicle directly on a lane of `route` (tests and fixtures). The
  // lane's queue order is kept sorted by position.
  int add_vehicle(std::vector<LaneId> route, int route_index, double position, double speed);

  // Sets each program from the joint action: same phase restarts green,
  // a change goes through yellow and all-red first. Throws if an
  // intersection is missing, unknown, virtual, or not at a boundary.
  void apply_actions(const JointAction& joint);

  // Advances one 1-second tick.
  void step();

  // Steps until every program is at a decision boundary.
  void advance_to_boundary();
  bool at_decision_boundary() const;

  IntersectionObservation observe(IntersectionId id) const;

  // Queued vehicles on the 12 incoming lanes of `id`.
  int intersection_queue(IntersectionId id) const;
  // Queued vehicles on each controlled movement's receiving road, in
  // controlled-lane order; 0 where the receiving side is virtual.
  std::array<int, kControlledLanes> downstream_queues(IntersectionId id) const;
  // Queued count per controlled lane, in controlled-lane order.
  std::array<int, kControlledLanes> controlled_queues(IntersectionId id) const;

  MetricsReport metrics() const;

  bool operator==(const SimState& other) const;

 private:
  bool is_queued(const Vehicle& v) const { return v.speed < params_.queue_speed; }
  LaneId current_lane(const Vehicle& v) const { return routes_[v.route][v.route_index]; }
  void spawn();
  void move();
  void inject();
  void account();

  std::shared_ptr<const RoadNetwork> network_;
  FlowSpec flow_;
  SimParams params_;
  std::uint64_t seed_ = 0;
  std::int64_t clock_ = 0;

  std::vector<std::vector<LaneId>> routes_;
  std::vector<double> next_spawn_;
  std::vector<Vehicle> vehicles_;
  std::vector<std::deque<int>> lanes_;
  std::vector<std::deque<int>> entry_backlog_;
  std::vector<PhaseProgram> programs_;
  std::size_t departed_ = 0;

  std::int64_t queue_samples_ = 0;
  double queue_sample_sum_ = 0.0;
};

// Immutable copy of a simulator state; restoring yields an independent state.
class Snapshot {
 public:
  explicit Snapshot(SimState state) : state_(std::move(state)) {}
  SimState restore() const { return state_; }
  const SimState& state() const { return state_; }

 private:
  SimState state_;
};

inline Snapshot snapshot(const SimState& state) { return Snapshot(state); }

SimState build_grid(int rows, int cols, double lane_length_m, FlowSpec flow, std::uint64_t seed,
                    SimParams params = {});

// Demand generator for grid-like networks: from every boundary entry, one
// straight route plus one route turning left and one turning right at the
// first intersection. Start offsets are drawn per route from the seed.
struct DemandProfile {
  double ew_through_headway = 6.0;
  double ns_through_headway = 6.0;
  double left_headway = 20.0;
  double right_headway = 20.0;
  double start = 0.0;
  double end = 3600.0;
};

FlowSpec synthetic_flow(const RoadNetwork& net, const DemandProfile& demand, std::uint64_t seed);

}  // namespace dglight
