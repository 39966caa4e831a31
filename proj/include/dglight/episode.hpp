#pragma once

#include "dglight/baselines.hpp"
#include "dglight/simulator.hpp"

#include <cstdint>
#include <functional>

namespace dglight {

// An episode is a fixed number of decisions: episode_s / interval_s.
struct EpisodeSpec {
  int episode_s = 3600;
  int interval_s = 30;

  int decisions() const;
};

using Controller = std::function<JointAction(const SimState&, std::int64_t decision)>;

// Runs from the current state: advance to the first boundary, then apply
// `decisions()` joint actions, each followed by advancing to the next
// boundary. Returns the final metrics.
MetricsReport run_episode(SimState& state, const Controller& controller, const EpisodeSpec& spec);

Controller fixed_time_controller(FixedTimePlan plan = {});
Controller max_pressure_controller();
// Each intersection draws independently from random_policy.
Controller random_controller(std::uint64_t seed);
// Same phase everywhere, every decision.
Controller constant_controller(Phase phase);

}  // namespace dglight
