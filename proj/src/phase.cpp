#include "dglight/phase.hpp"

namespace dglight {

std::string_view phase_name(Phase p) {
  switch (p) {
    case Phase::kETWT: return "ETWT";
    case Phase::kNTST: return "NTST";
    case Phase::kELWL: return "ELWL";
    case Phase::kNLSL: return "NLSL";
  }
  return "?";
}

std::optional<Phase> phase_from_name(std::string_view name) {
  for (Phase p : kAllPhases) {
    if (phase_name(p) == name) return p;
  }
  return std::nullopt;
}

std::string_view direction_name(Direction d) {
  switch (d) {
    case Direction::kNorth: return "North";
    case Direction::kSouth: return "South";
    case Direction::kEast: return "East";
    case Direction::kWest: return "West";
  }
  return "?";
}

std::string_view direction_code(Direction d) { return direction_name(d).substr(0, 1); }

std::optional<Direction> direction_from_code(std::string_view code) {
  for (Direction d : kAllDirections) {
    if (direction_code(d) == code) return d;
  }
  return std::nullopt;
}

std::string_view movement_name(Movement m) {
  switch (m) {
    case Movement::kThrough: return "through";
    case Movement::kLeft: return "left";
    case Movement::kRight: return "right";
  }
  return "?";
}

std::optional<Movement> movement_from_name(std::string_view name) {
  for (Movement m : kAllMovements) {
    if (movement_name(m) == name) return m;
  }
  return std::nullopt;
}

}  // namespace dglight
