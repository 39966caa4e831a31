#include "dglight/episode.hpp"

#include "dglight/error.hpp"

namespace dglight {

int EpisodeSpec::decisions() const {
  if (episode_s <= 0 || interval_s <= 0 || episode_s % interval_s != 0) {
    throw Error("episode: interval must divide the episode length");
  }
  return episode_s / interval_s;
}

MetricsReport run_episode(SimState& state, const Controller& controller, const EpisodeSpec& spec) {
  const int n = spec.decisions();
  state.advance_to_boundary();
  for (int d = 0; d < n; ++d) {
    state.apply_actions(controller(state, d));
    state.advance_to_boundary();
  }
  return state.metrics();
}

Controller fixed_time_controller(FixedTimePlan plan) {
  return [plan = std::move(plan)](const SimState& s, std::int64_t d) {
    JointAction joint;
    for (IntersectionId id : s.network().controlled()) joint[id] = fixed_time(plan, d);
    return joint;
  };
}

Controller max_pressure_controller() {
  return [](const SimState& s, std::int64_t) {
    JointAction joint;
    for (IntersectionId id : s.network().controlled()) joint[id] = max_pressure(s, id);
    return joint;
  };
}

Controller random_controller(std::uint64_t seed) {
  return [seed](const SimState& s, std::int64_t d) {
    JointAction joint;
    for (IntersectionId id : s.network().controlled()) {
      joint[id] = random_policy(seed * 1000003ULL + static_cast<std::uint64_t>(id), d);
    }
    return joint;
  };
}

Controller constant_controller(Phase phase) {
  return [phase](const SimState& s, std::int64_t) {
    JointAction joint;
    for (IntersectionId id : s.network().controlled()) joint[id] = phase;
    return joint;
  };
}

}  // namespace dglight
