#include "dglight/simulator.hpp"

#include "dglight/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>

namespace dglight {

SimState::SimState(std::shared_ptr<const RoadNetwork> network, FlowSpec flow, SimParams params,
                   std::uint64_t seed)
    : network_(std::move(network)), flow_(std::move(flow)), params_(params), seed_(seed) {
  if (!network_) throw Error("simulator: null network");
  for (const FlowEntry& e : flow_.entries) {
    network_->validate_route(e.route);
    if (!(e.headway > 0.0)) throw Error("flow: headway must be positive");
    if (e.start > e.end) throw Error("flow: start after end");
    routes_.push_back(e.route);
    next_spawn_.push_back(e.start);
  }
  lanes_.resize(network_->lanes().size());
  entry_backlog_.resize(network_->lanes().size());
  programs_.resize(network_->intersections().size());
  for (PhaseProgram& p : programs_) p.remaining = params_.green_s;
}

const PhaseProgram& SimState::program(IntersectionId id) const {
  if (network().intersection(id).is_virtual) {
    throw Error("simulator: " + network().intersection(id).name + " has no signal program");
  }
  return programs_[id];
}

std::size_t SimState::active() const { return vehicles_.size() - departed_; }

int SimState::add_vehicle(std::vector<LaneId> route, int route_index, double position,
                          double speed) {
  network_->validate_route(route);
  if (route_index < 0 || route_index >= static_cast<int>(route.size())) {
    throw Error("add_vehicle: route index out of range");
  }
  const LaneId lane = route[route_index];
  if (position < 0.0 || position > network_->lane(lane).length || speed < 0.0) {
    throw Error("add_vehicle: position or speed out of range");
  }
  routes_.push_back(std::move(route));
  Vehicle v;
  v.id = static_cast<int>(vehicles_.size());
  v.route = static_cast<int>(routes_.size() - 1);
  v.route_index = route_index;
  v.in_network = true;
  v.position = position;
  v.speed = speed;
  v.enter_time = clock();
  vehicles_.push_back(v);
  auto& q = lanes_[lane];
  auto it = std::find_if(q.begin(), q.end(),
                         [&](int other) { return vehicles_[other].position < position; });
  q.insert(it, v.id);
  return v.id;
}

void SimState::apply_actions(const JointAction& joint) {
  for (const auto& [id, phase] : joint) {
    if (id < 0 || static_cast<size_t>(id) >= programs_.size()) {
      throw Error("apply_actions: unknown intersection id " + std::to_string(id));
    }
    if (network().intersection(id).is_virtual) {
      throw Error("apply_actions: " + network().intersection(id).name + " is virtual");
    }
  }
  for (IntersectionId id : network().controlled()) {
    auto it = joint.find(id);
    if (it == joint.end()) {
      throw Error("apply_actions: no action for " + network().intersection(id).name);
    }
    if (!programs_[id].at_boundary()) {
      throw Error("apply_actions: " + network().intersection(id).name +
                  " is not at a decision boundary");
    }
  }
  for (IntersectionId id : network().controlled()) {
    PhaseProgram& p = programs_[id];
    const Phase chosen = joint.at(id);
    if (chosen == p.current) {
      p.stage = Stage::kGreen;
      p.remaining = params_.green_s;
      p.pending.reset();
    } else {
      p.stage = Stage::kYellow;
      p.remaining = params_.yellow_s;
      p.pending = chosen;
    }
  }
}

void SimState::spawn() {
  const double now = clock();
  for (size_t e = 0; e < flow_.entries.size(); ++e) {
    const FlowEntry& entry = flow_.entries[e];
    while (next_spawn_[e] <= now && next_spawn_[e] <= entry.end) {
      Vehicle v;
      v.id = static_cast<int>(vehicles_.size());
      v.route = static_cast<int>(e);
      v.enter_time = now;
      vehicles_.push_back(v);
      entry_backlog_[entry.route.front()].push_back(v.id);
      next_spawn_[e] += entry.headway;
    }
  }
}

void SimState::move() {
  const double spacing = params_.vehicle_length + params_.min_gap;
  const double inf = std::numeric_limits<double>::infinity();
  const auto lane_count = static_cast<LaneId>(lanes_.size());

  std::vector<double> tail_limit(lanes_.size(), inf);
  for (LaneId l = 0; l < lane_count; ++l) {
    if (!lanes_[l].empty()) tail_limit[l] = vehicles_[lanes_[l].back()].position;
  }

  struct Crossing {
    int vehicle;
    LaneId lane;
    double overflow;
  };
  std::vector<Crossing> crossings;
  std::vector<std::pair<int, LaneId>> departures;
  std::vector<std::pair<int, double>> updates;

  for (LaneId l = 0; l < lane_count; ++l) {
    const auto& q = lanes_[l];
    if (q.empty()) continue;
    const Lane& lane = network().lane(l);
    const bool exit = network().is_exit(l);
    const bool released = exit || programs_[lane.to].releases(lane.approach, lane.movement);
    for (size_t k = 0; k < q.size(); ++k) {
      const Vehicle& v = vehicles_[q[k]];
      double reach = v.position + params_.free_speed;
      if (k > 0) {
        const double leader = vehicles_[q[k - 1]].position;
        reach = std::min(reach, std::max(v.position, leader - spacing));
      } else if (reach >= lane.length) {
        if (exit) {
          departures.emplace_back(v.id, l);
          continue;
        }
        if (released) {
          crossings.push_back({v.id, l, reach - lane.length});
          continue;
        }
        reach = lane.length;
      }
      updates.emplace_back(v.id, reach);
    }
  }

  for (const auto& [id, reach] : updates) {
    Vehicle& v = vehicles_[id];
    v.speed = reach - v.position;
    v.position = reach;
  }
  for (const auto& [id, l] : departures) {
    Vehicle& v = vehicles_[id];
    v.speed = params_.free_speed;
    v.exit_time = clock() + 1.0;
    v.in_network = false;
    lanes_[l].pop_front();
    ++departed_;
  }
  for (const Crossing& c : crossings) {
    Vehicle& v = vehicles_[c.vehicle];
    const double length = network().lane(c.lane).length;
    const LaneId next = routes_[v.route][v.route_index + 1];
    const double allowed = tail_limit[next] - spacing;
    if (allowed < 0.0) {
      v.speed = length - v.position;
      v.position = length;
      continue;
    }
    const double entry = std::min({c.overflow, allowed, network().lane(next).length});
    v.speed = (length - v.position) + entry;
    v.position = entry;
    v.route_index += 1;
    lanes_[c.lane].pop_front();
    lanes_[next].push_back(v.id);
    tail_limit[next] = entry;
  }
}

void SimState::inject() {
  const double spacing = params_.vehicle_length + params_.min_gap;
  for (LaneId l = 0; l < static_cast<LaneId>(entry_backlog_.size()); ++l) {
    auto& backlog = entry_backlog_[l];
    if (backlog.empty()) continue;
    auto& q = lanes_[l];
    if (!q.empty() && vehicles_[q.back()].position < spacing) continue;
    Vehicle& v = vehicles_[backlog.front()];
    backlog.pop_front();
    v.in_network = true;
    v.position = 0.0;
    v.speed = params_.free_speed;
    q.push_back(v.id);
  }
}

void SimState::account() {
  std::int64_t queued = 0;
  for (LaneId l = 0; l < static_cast<LaneId>(lanes_.size()); ++l) {
    if (network().is_exit(l)) continue;
    for (int id : lanes_[l]) {
      Vehicle& v = vehicles_[id];
      if (is_queued(v)) {
        v.cumulative_wait += 1.0;
        ++queued;
      }
    }
  }
  for (const auto& backlog : entry_backlog_) {
    for (int id : backlog) vehicles_[id].cumulative_wait += 1.0;
  }
  queue_sample_sum_ += static_cast<double>(queued);
  ++queue_samples_;
}

void SimState::step() {
  spawn();
  move();
  inject();
  account();
  for (IntersectionId id : network().controlled()) {
    PhaseProgram& p = programs_[id];
    p.remaining = std::max(p.remaining - 1, 0);
    if (p.remaining > 0) continue;
    if (p.stage == Stage::kYellow) {
      p.stage = Stage::kAllRed;
      p.remaining = params_.all_red_s;
    }
    if (p.stage == Stage::kAllRed && p.remaining <= 0) {
      p.stage = Stage::kGreen;
      p.current = p.pending.value_or(p.current);
      p.pending.reset();
      p.remaining = params_.green_s;
    }
  }
  ++clock_;
}

bool SimState::at_decision_boundary() const {
  return std::all_of(network().controlled().begin(), network().controlled().end(),
                     [&](IntersectionId id) { return programs_[id].at_boundary(); });
}

void SimState::advance_to_boundary() {
  while (!at_decision_boundary()) step();
}

IntersectionObservation SimState::observe(IntersectionId id) const {
  const Intersection& node = network().intersection(id);
  if (node.is_virtual) throw Error("observe: " + node.name + " is virtual");

  IntersectionObservation obs;
  obs.intersection = id;
  obs.current = programs_[id].current;

  std::array<std::optional<int>, 4> toward_here{};
  for (Direction d : kAllDirections) {
    const IntersectionId j = node.neighbor_on(d);
    if (j == kNoId || network().intersection(j).is_virtual) continue;
    const Intersection& nb = network().intersection(j);
    int count = 0;
    for (Direction a : kAllDirections) {
      for (Movement m : kAllMovements) {
        if (exit_side(a, m) != opposite(d)) continue;
        count += static_cast<int>(lanes_[nb.incoming_lane(a, m)].size());
      }
    }
    toward_here[static_cast<int>(d)] = count;
  }

  for (Phase p : kAllPhases) {
    const PhaseMovements pm = phase_movements(p);
    NeighborTotals& totals = obs.neighbors[index_of(p)];
    for (int side = 0; side < 2; ++side) {
      const LaneId l = node.incoming_lane(pm.approaches[side], pm.movement);
      const double length = network().lane(l).length;
      LaneCounts& counts = obs.lane(p, side);
      for (int vid : lanes_[l]) {
        const Vehicle& v = vehicles_[vid];
        if (is_queued(v)) {
          ++counts.queued;
        } else {
          const int third = std::min(2, static_cast<int>(std::floor(3.0 * v.position / length)));
          ++counts.segments[2 - third];
        }
      }
      const auto& incoming = toward_here[static_cast<int>(pm.approaches[side])];
      totals.incoming[side] = incoming;
      if (incoming) {
        totals.known_total += *incoming;
        totals.available += 1;
      }
    }
  }
  return obs;
}

int SimState::intersection_queue(IntersectionId id) const {
  const Intersection& node = network().intersection(id);
  if (node.is_virtual) throw Error("intersection_queue: " + node.name + " is virtual");
  int total = 0;
  for (const auto& by_movement : node.incoming) {
    for (LaneId l : by_movement) {
      for (int vid : lanes_[l]) total += is_queued(vehicles_[vid]) ? 1 : 0;
    }
  }
  return total;
}

std::array<int, kControlledLanes> SimState::controlled_queues(IntersectionId id) const {
  const Intersection& node = network().intersection(id);
  if (node.is_virtual) throw Error("controlled_queues: " + node.name + " is virtual");
  std::array<int, kControlledLanes> out{};
  for (Phase p : kAllPhases) {
    const PhaseMovements pm = phase_movements(p);
    for (int side = 0; side < 2; ++side) {
      int n = 0;
      for (int vid : lanes_[node.incoming_lane(pm.approaches[side], pm.movement)]) {
        n += is_queued(vehicles_[vid]) ? 1 : 0;
      }
      out[2 * index_of(p) + side] = n;
    }
  }
  return out;
}

std::array<int, kControlledLanes> SimState::downstream_queues(IntersectionId id) const {
  const Intersection& node = network().intersection(id);
  if (node.is_virtual) throw Error("downstream_queues: " + node.name + " is virtual");
  std::array<int, kControlledLanes> out{};
  for (Phase p : kAllPhases) {
    const PhaseMovements pm = phase_movements(p);
    for (int side = 0; side < 2; ++side) {
      const Direction s = exit_side(pm.approaches[side], pm.movement);
      const IntersectionId j = node.neighbor_on(s);
      int n = 0;
      if (j != kNoId && !network().intersection(j).is_virtual) {
        for (LaneId l : network().road_lanes(id, s)) {
          for (int vid : lanes_[l]) n += is_queued(vehicles_[vid]) ? 1 : 0;
        }
      }
      out[2 * index_of(p) + side] = n;
    }
  }
  return out;
}

MetricsReport SimState::metrics() const {
  MetricsReport r;
  if (queue_samples_ > 0) r.aql = queue_sample_sum_ / static_cast<double>(queue_samples_);
  if (vehicles_.empty()) return r;
  double travel = 0.0;
  double wait = 0.0;
  for (const Vehicle& v : vehicles_) {
    travel += v.exit_time.value_or(clock()) - v.enter_time;
    wait += v.cumulative_wait;
  }
  const auto n = static_cast<double>(vehicles_.size());
  r.att = travel / n;
  r.awt = wait / n;
  return r;
}

bool SimState::operator==(const SimState& other) const {
  return (network_ == other.network_ || *network_ == *other.network_) && flow_ == other.flow_ &&
         params_ == other.params_ && seed_ == other.seed_ && clock_ == other.clock_ &&
         routes_ == other.routes_ && next_spawn_ == other.next_spawn_ &&
         vehicles_ == other.vehicles_ && lanes_ == other.lanes_ &&
         entry_backlog_ == other.entry_backlog_ && programs_ == other.programs_ &&
         departed_ == other.departed_ && queue_samples_ == other.queue_samples_ &&
         queue_sample_sum_ == other.queue_sample_sum_;
}

SimState build_grid(int rows, int cols, double lane_length_m, FlowSpec flow, std::uint64_t seed,
                    SimParams params) {
  auto net = std::make_shared<const RoadNetwork>(RoadNetwork::grid(rows, cols, lane_length_m));
  return SimState(std::move(net), std::move(flow), params, seed);
}

FlowSpec synthetic_flow(const RoadNetwork& net, const DemandProfile& demand, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  FlowSpec flow;
  for (IntersectionId id : net.controlled()) {
    const Intersection& node = net.intersection(id);
    for (Direction d : kAllDirections) {
      const IntersectionId from = node.neighbor_on(d);
      if (from == kNoId || !net.intersection(from).is_virtual) continue;
      const bool east_west = d == Direction::kEast || d == Direction::kWest;
      for (Movement first : kAllMovements) {
        double headway = 0.0;
        switch (first) {
          case Movement::kThrough:
            headway = east_west ? demand.ew_through_headway : demand.ns_through_headway;
            break;
          case Movement::kLeft: headway = demand.left_headway; break;
          case Movement::kRight: headway = demand.right_headway; break;
        }
        if (!(headway > 0.0) || !std::isfinite(headway)) continue;
        FlowEntry e;
        LaneId lane = node.incoming_lane(d, first);
        e.route.push_back(lane);
        while (!net.is_exit(lane)) {
          lane = net.next_lane(lane, Movement::kThrough);
          e.route.push_back(lane);
        }
        std::uniform_real_distribution<double> offset(0.0, headway);
        e.start = std::floor(demand.start + offset(rng));
        e.end = demand.end;
        e.headway = headway;
        flow.entries.push_back(std::move(e));
      }
    }
  }
  return flow;
}

}  // namespace dglight
