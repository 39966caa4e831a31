#include "dglight/baselines.hpp"

#include "dglight/error.hpp"

#include <random>

namespace dglight {

int FixedTimePlan::cycle_length() const {
  int total = 0;
  for (int s : splits) total += s;
  return total;
}

Phase fixed_time(const FixedTimePlan& plan, std::int64_t decision_index) {
  if (plan.order.empty() || plan.order.size() != plan.splits.size()) {
    throw Error("fixed_time: order and splits must be non-empty and equally long");
  }
  for (int s : plan.splits) {
    if (s < 1) throw Error("fixed_time: every split must be at least one interval");
  }
  const std::int64_t cycle = plan.cycle_length();
  std::int64_t slot = ((decision_index % cycle) + cycle) % cycle;
  for (size_t i = 0; i < plan.order.size(); ++i) {
    if (slot < plan.splits[i]) return plan.order[i];
    slot -= plan.splits[i];
  }
  return plan.order.back();
}

std::array<double, kNumPhases> phase_pressures(const IntersectionObservation& obs,
                                               const std::array<int, kControlledLanes>& downstream) {
  std::array<double, kNumPhases> pressure{};
  for (Phase p : kAllPhases) {
    for (int side = 0; side < 2; ++side) {
      const int slot = 2 * index_of(p) + side;
      pressure[index_of(p)] += obs.lanes[slot].queued - downstream[slot];
    }
  }
  return pressure;
}

Phase max_pressure(const IntersectionObservation& obs,
                   const std::array<int, kControlledLanes>& downstream) {
  const auto pressure = phase_pressures(obs, downstream);
  int best = 0;
  for (int i = 1; i < kNumPhases; ++i) {
    if (pressure[i] > pressure[best]) best = i;
  }
  return phase_at(best);
}

Phase max_pressure(const SimState& state, IntersectionId id) {
  return max_pressure(state.observe(id), state.downstream_queues(id));
}

Phase random_policy(std::uint64_t seed, std::int64_t decision_index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(decision_index),
                    static_cast<std::uint32_t>(static_cast<std::uint64_t>(decision_index) >> 32)};
  std::mt19937_64 rng(seq);
  return phase_at(static_cast<int>(rng() % kNumPhases));
}

}  // namespace dglight
