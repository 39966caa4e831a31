#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string_view>

namespace dglight {

// Signal phases in canonical order. Every vector indexed by action uses this
// order.
enum class Phase : std::uint8_t { kETWT = 0, kNTST = 1, kELWL = 2, kNLSL = 3 };

inline constexpr int kNumPhases = 4;
inline constexpr std::array<Phase, kNumPhases> kAllPhases = {Phase::kETWT, Phase::kNTST,
                                                             Phase::kELWL, Phase::kNLSL};

constexpr int index_of(Phase p) { return static_cast<int>(p); }
constexpr Phase phase_at(int i) { return static_cast<Phase>(i); }

std::string_view phase_name(Phase p);
// Exact uppercase match only.
std::optional<Phase> phase_from_name(std::string_view name);

// Side of an intersection an approach comes from.
enum class Direction : std::uint8_t { kNorth = 0, kSouth = 1, kEast = 2, kWest = 3 };
inline constexpr std::array<Direction, 4> kAllDirections = {Direction::kNorth, Direction::kSouth,
                                                            Direction::kEast, Direction::kWest};

enum class Movement : std::uint8_t { kThrough = 0, kLeft = 1, kRight = 2 };
inline constexpr std::array<Movement, 3> kAllMovements = {Movement::kThrough, Movement::kLeft,
                                                          Movement::kRight};

std::string_view direction_name(Direction d);  // "North", "South", ...
std::string_view direction_code(Direction d);  // "N", "S", ...
std::optional<Direction> direction_from_code(std::string_view code);
std::string_view movement_name(Movement m);    // "through", "left", "right"
std::optional<Movement> movement_from_name(std::string_view name);

constexpr Direction opposite(Direction d) {
  switch (d) {
    case Direction::kNorth: return Direction::kSouth;
    case Direction::kSouth: return Direction::kNorth;
    case Direction::kEast: return Direction::kWest;
    case Direction::kWest: return Direction::kEast;
  }
  return d;
}

// Side of the intersection a vehicle leaves through, given the side it
// arrived from and its turning movement.
constexpr Direction exit_side(Direction approach, Movement m) {
  const Direction heading = opposite(approach);
  if (m == Movement::kThrough) return heading;
  Direction left = heading;
  switch (heading) {
    case Direction::kNorth: left = Direction::kWest; break;
    case Direction::kWest: left = Direction::kSouth; break;
    case Direction::kSouth: left = Direction::kEast; break;
    case Direction::kEast: left = Direction::kNorth; break;
  }
  return m == Movement::kLeft ? left : opposite(left);
}

// The two approaches and the movement released by a phase.
struct PhaseMovements {
  std::array<Direction, 2> approaches;
  Movement movement;
};

constexpr PhaseMovements phase_movements(Phase p) {
  switch (p) {
    case Phase::kETWT: return {{Direction::kEast, Direction::kWest}, Movement::kThrough};
    case Phase::kNTST: return {{Direction::kNorth, Direction::kSouth}, Movement::kThrough};
    case Phase::kELWL: return {{Direction::kEast, Direction::kWest}, Movement::kLeft};
    case Phase::kNLSL: return {{Direction::kNorth, Direction::kSouth}, Movement::kLeft};
  }
  return {{Direction::kEast, Direction::kWest}, Movement::kThrough};
}

constexpr bool phase_permits(Phase p, Direction approach, Movement m) {
  if (m == Movement::kRight) return true;
  const PhaseMovements pm = phase_movements(p);
  return pm.movement == m && (pm.approaches[0] == approach || pm.approaches[1] == approach);
}

// Controlled (signalised) lanes in fixed order: slot 2*phase + side, where
// side indexes phase_movements(phase).approaches.
inline constexpr int kControlledLanes = 8;

}  // namespace dglight
