#pragma once

// End-to-end loop: frozen critic, then alternating rollout collection and
// GRPO training of the policy.

#include "dglight/critic.hpp"
#include "dglight/episode.hpp"
#include "dglight/grpo.hpp"
#include "dglight/rollout.hpp"

#include <functional>
#include <vector>

namespace dglight {

// Executes one sampled response per intersection; unparseable responses
// fall back to max_pressure.
Controller policy_controller(const Policy& policy, std::uint64_t seed);

struct PipelineResult {
  MockPolicyParams policy;
  std::vector<EpisodeResult> episodes;
};

// `make_env(e)` builds the environment for episode e.
PipelineResult run_pipeline(const std::function<SimState(int)>& make_env, const FrozenCritic& critic,
                            MockPolicyParams policy, const RolloutConfig& rollout,
                            const GRPOConfig& grpo, int episodes,
                            const std::function<void(int, const EpisodeResult&)>& on_episode = {},
                            const std::function<void(const GrpoStepLog&)>& on_step = {});

}  // namespace dglight
