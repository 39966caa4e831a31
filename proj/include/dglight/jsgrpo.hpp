#pragma once

// Joint-scored variant: candidates are aligned across intersections into
// joint actions, each scored by a short forked rollout, and the returns are
// projected back to per-intersection action scores.

#include "dglight/critic.hpp"
#include "dglight/policy.hpp"
#include "dglight/rollout.hpp"
#include "dglight/simulator.hpp"

#include <functional>
#include <map>
#include <string>
#include <vector>

namespace dglight {

struct JSConfig {
  int horizon = 3;
  double gamma = 0.8;
  double alpha = 0.6;
  double beta = 0.3;
  double fallback_reward = 0.0;
  // Interior steps use max_pressure instead of resampling the policy. Cheap,
  // but not faithful to the method.
  bool cheap = false;

  void validate() const;
  static JSConfig h3() { return {}; }
  static JSConfig h6() {
    JSConfig c;
    c.horizon = 6;
    return c;
  }
};

nlohmann::json js_config_to_json(const JSConfig& c);
JSConfig js_config_from_json(const nlohmann::json& j);

struct JointCandidate {
  int index = 0;
  std::map<IntersectionId, ParseResult> actions;  // invalid parses kept as-is
};

// samples[i][j]: candidate j of intersection ids[i].
std::vector<JointCandidate> align_candidates(const std::vector<IntersectionId>& ids,
                                             const std::vector<std::vector<ParseResult>>& samples,
                                             int k);

// -(1/|V|) sum_i (alpha m_i + beta mean_{N(i)} m + (1 - alpha - beta) mean_V m)
double mixed_reward(const std::vector<double>& congestion, const Adjacency& adjacency, double alpha,
                    double beta);
// Congestion is the queued count on each intersection's incoming lanes.
double mixed_reward(const SimState& state, double alpha, double beta);

using RewardFn = std::function<double(const SimState&)>;

struct ForkContext {
  const Policy* policy = nullptr;  // may be null in cheap mode or when horizon == 1
  int step = 0;
  std::uint64_t seed = 0;
  RewardFn reward;  // defaults to mixed_reward with cfg weights
};

// Discounted return of executing `joint` from the snapshot and following the
// policy for the remaining horizon.
double evaluate_candidate(const Snapshot& snapshot, const JointCandidate& joint, const JSConfig& cfg,
                          const ForkContext& ctx);

std::map<IntersectionId, QVector> project_scores(const std::vector<JointCandidate>& joints,
                                                 const std::vector<double>& returns,
                                                 double fallback);

EpisodeResult collect_js_episode(SimState env, const Policy& policy, const RolloutConfig& rollout,
                                 const JSConfig& cfg);

}  // namespace dglight
