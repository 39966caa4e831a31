#include "dglight/pipeline.hpp"

#include "dglight/baselines.hpp"
#include "dglight/error.hpp"
#include "dglight/seed.hpp"

namespace dglight {

Controller policy_controller(const Policy& policy, std::uint64_t seed) {
  return [&policy, seed](const SimState& s, std::int64_t decision) {
    JointAction joint;
    for (IntersectionId id : s.network().controlled()) {
      const IntersectionObservation obs = s.observe(id);
      const auto samples =
          policy.generate(render_prompt(obs, default_task_description(), static_cast<int>(decision)),
                          obs, 1,
                          derive_seed(seed, {static_cast<std::uint64_t>(decision),
                                             static_cast<std::uint64_t>(id)}));
      const auto phase = samples.empty() ? std::nullopt : parse_response(samples.front().text).phase;
      joint[id] = phase ? *phase : max_pressure(s, id);
    }
    return joint;
  };
}

PipelineResult run_pipeline(const std::function<SimState(int)>& make_env, const FrozenCritic& critic,
                            MockPolicyParams policy, const RolloutConfig& rollout,
                            const GRPOConfig& grpo, int episodes,
                            const std::function<void(int, const EpisodeResult&)>& on_episode,
                            const std::function<void(const GrpoStepLog&)>& on_step) {
  PipelineResult result;
  for (int e = 0; e < episodes; ++e) {
    RolloutConfig rc = rollout;
    rc.seed = derive_seed(rollout.seed, {static_cast<std::uint64_t>(e)});
    EpisodeResult ep = collect_episode(make_env(e), MockPolicy(policy, grpo.sampling), critic, rc);
    if (ep.truncated) throw TransportError("rollout truncated: " + ep.error);
    if (on_episode) on_episode(e, ep);
    GRPOConfig gc = grpo;
    gc.seed = derive_seed(grpo.seed, {static_cast<std::uint64_t>(e)});
    policy = grpo_train(std::move(policy), to_entries(ep.records, rollout.r_invalid), gc, on_step);
    result.episodes.push_back(std::move(ep));
  }
  result.policy = std::move(policy);
  return result;
}

}  // namespace dglight
