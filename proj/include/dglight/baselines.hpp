#pragma once

#include "dglight/phase.hpp"
#include "dglight/simulator.hpp"

#include <array>
#include <cstdint>
#include <vector>

namespace dglight {

// Cyclic plan; each phase holds green for `splits[i]` consecutive decisions.
struct FixedTimePlan {
  std::vector<Phase> order{kAllPhases.begin(), kAllPhases.end()};
  std::vector<int> splits{1, 1, 1, 1};

  int cycle_length() const;
};

Phase fixed_time(const FixedTimePlan& plan, std::int64_t decision_index);

// Pressure of each phase: sum over its two movements of incoming queued
// minus downstream queued. Both arrays are in controlled-lane order.
std::array<double, kNumPhases> phase_pressures(const IntersectionObservation& obs,
                                               const std::array<int, kControlledLanes>& downstream);

// Highest-pressure phase, ties to the lowest canonical index.
Phase max_pressure(const IntersectionObservation& obs,
                   const std::array<int, kControlledLanes>& downstream);

// Convenience: observe and decide from a live state.
Phase max_pressure(const SimState& state, IntersectionId id);

// Uniform phase, a pure function of (seed, decision index).
Phase random_policy(std::uint64_t seed, std::int64_t decision_index);

}  // namespace dglight
