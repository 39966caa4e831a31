#include "dglight/jsgrpo.hpp"

#include "dglight/baselines.hpp"
#include "dglight/error.hpp"
#include "dglight/seed.hpp"

namespace dglight {

using nlohmann::json;

void JSConfig::validate() const {
  if (horizon < 1) throw Error("js: horizon must be >= 1");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw Error("js: gamma must be in [0, 1]");
  if (alpha < 0.0 || beta < 0.0 || alpha + beta > 1.0) {
    throw Error("js: need alpha, beta >= 0 and alpha + beta <= 1");
  }
}

json js_config_to_json(const JSConfig& c) {
  return {{"horizon", c.horizon}, {"gamma", c.gamma}, {"alpha", c.alpha}, {"beta", c.beta},
          {"fallback_reward", c.fallback_reward}, {"cheap", c.cheap}};
}

JSConfig js_config_from_json(const json& j) {
  JSConfig c;
  c.horizon = j.value("horizon", c.horizon);
  c.gamma = j.value("gamma", c.gamma);
  c.alpha = j.value("alpha", c.alpha);
  c.beta = j.value("beta", c.beta);
  c.fallback_reward = j.value("fallback_reward", c.fallback_reward);
  c.cheap = j.value("cheap", c.cheap);
  c.validate();
  return c;
}

std::vector<JointCandidate> align_candidates(const std::vector<IntersectionId>& ids,
                                             const std::vector<std::vector<ParseResult>>& samples,
                                             int k) {
  if (k < 1) throw Error("align_candidates: k must be >= 1");
  if (ids.size() != samples.size()) throw Error("align_candidates: one sample list per intersection");
  for (size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].size() != static_cast<size_t>(k)) {
      throw Error("align_candidates: intersection " + std::to_string(ids[i]) + " has " +
                  std::to_string(samples[i].size()) + " samples, expected " + std::to_string(k));
    }
  }
  std::vector<JointCandidate> joints(static_cast<size_t>(k));
  for (int j = 0; j < k; ++j) {
    joints[j].index = j;
    for (size_t i = 0; i < ids.size(); ++i) joints[j].actions[ids[i]] = samples[i][j];
  }
  return joints;
}

double mixed_reward(const std::vector<double>& m, const Adjacency& adjacency, double alpha,
                    double beta) {
  if (m.size() != adjacency.size()) throw Error("mixed_reward: congestion and adjacency differ");
  if (m.empty()) return 0.0;
  const double n = static_cast<double>(m.size());
  double global = 0.0;
  for (double v : m) global += v;
  global /= n;
  double total = 0.0;
  for (size_t i = 0; i < m.size(); ++i) {
    double nb = 0.0;
    for (int j : adjacency[i]) nb += m[j];
    if (!adjacency[i].empty()) nb /= static_cast<double>(adjacency[i].size());
    total += alpha * m[i] + beta * nb + (1.0 - alpha - beta) * global;
  }
  return -total / n;
}

double mixed_reward(const SimState& state, double alpha, double beta) {
  std::vector<double> m;
  for (IntersectionId id : state.network().controlled()) {
    m.push_back(static_cast<double>(state.intersection_queue(id)));
  }
  return mixed_reward(m, critic_adjacency(state.network()), alpha, beta);
}

double evaluate_candidate(const Snapshot& snapshot, const JointCandidate& joint, const JSConfig& cfg,
                          const ForkContext& ctx) {
  cfg.validate();
  SimState fork = snapshot.restore();
  const auto& ids = fork.network().controlled();
  const RewardFn reward =
      ctx.reward ? ctx.reward : [&](const SimState& s) { return mixed_reward(s, cfg.alpha, cfg.beta); };

  long double ret = 0.0L;
  long double discount = 1.0L;
  for (int tau = 0; tau < cfg.horizon; ++tau) {
    JointAction act;
    for (IntersectionId id : ids) {
      std::optional<Phase> choice;
      if (tau == 0) {
        const auto it = joint.actions.find(id);
        if (it == joint.actions.end()) throw Error("evaluate_candidate: joint misses an intersection");
        choice = it->second.phase;
      } else if (!cfg.cheap) {
        if (!ctx.policy) throw Error("evaluate_candidate: no policy to resample from");
        const IntersectionObservation obs = fork.observe(id);
        const auto samples = ctx.policy->generate(
            render_prompt(obs, default_task_description(), ctx.step + tau), obs, 1,
            derive_seed(ctx.seed, {static_cast<std::uint64_t>(joint.index),
                                   static_cast<std::uint64_t>(tau), static_cast<std::uint64_t>(id)}));
        if (samples.size() != 1) throw TransportError("policy returned no sample");
        choice = parse_response(samples.front().text).phase;
      }
      act[id] = choice ? *choice : max_pressure(fork, id);
    }
    fork.apply_actions(act);
    fork.advance_to_boundary();
    ret += discount * static_cast<long double>(reward(fork));
    discount *= static_cast<long double>(cfg.gamma);
  }
  return static_cast<double>(ret);
}

std::map<IntersectionId, QVector> project_scores(const std::vector<JointCandidate>& joints,
                                                 const std::vector<double>& returns,
                                                 double fallback) {
  if (joints.size() != returns.size()) throw Error("project_scores: one return per joint candidate");
  std::map<IntersectionId, std::array<double, kNumPhases>> sums;
  std::map<IntersectionId, std::array<int, kNumPhases>> counts;
  for (size_t c = 0; c < joints.size(); ++c) {
    for (const auto& [id, parse] : joints[c].actions) {
      auto& s = sums[id];
      auto& n = counts[id];
      if (!parse.valid()) continue;
      s[index_of(*parse.phase)] += returns[c];
      n[index_of(*parse.phase)] += 1;
    }
  }
  std::map<IntersectionId, QVector> out;
  for (const auto& [id, s] : sums) {
    QVector q;
    for (int a = 0; a < kNumPhases; ++a) {
      const int n = counts[id][a];
      q.values[a] = n > 0 ? s[a] / n : fallback;
    }
    out[id] = q;
  }
  return out;
}

EpisodeResult collect_js_episode(SimState env, const Policy& policy, const RolloutConfig& rollout,
                                 const JSConfig& cfg) {
  rollout.validate();
  cfg.validate();
  EpisodeResult result;
  const RoadNetwork& net = env.network();
  const auto& ids = net.controlled();
  const json js = {{"H", cfg.horizon}, {"gamma", cfg.gamma}, {"alpha", cfg.alpha},
                   {"beta", cfg.beta}, {"cheap", cfg.cheap}};

  env.advance_to_boundary();
  for (int step = 0; step < rollout.episode.decisions(); ++step) {
    std::vector<RolloutRecord> batch;
    JointAction joint;
    try {
      std::vector<PromptText> prompts;
      std::vector<std::vector<ResponseSample>> samples;
      std::vector<std::vector<ParseResult>> parses;
      for (IntersectionId id : ids) {
        const IntersectionObservation obs = env.observe(id);
        prompts.push_back(render_prompt(obs, default_task_description(), step));
        samples.push_back(policy.generate(
            prompts.back(), obs, rollout.k,
            derive_seed(rollout.seed, {static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(id)})));
        parses.emplace_back();
        for (const auto& s : samples.back()) parses.back().push_back(parse_response(s.text));
      }
      const auto joints = align_candidates(ids, parses, rollout.k);
      const Snapshot snap = snapshot(env);
      ForkContext ctx{&policy, step, derive_seed(rollout.seed, {0x6a73, static_cast<std::uint64_t>(step)}), {}};
      std::vector<double> returns;
      for (const auto& j : joints) returns.push_back(evaluate_candidate(snap, j, cfg, ctx));
      const auto scores = project_scores(joints, returns, cfg.fallback_reward);

      for (size_t i = 0; i < ids.size(); ++i) {
        const QVector& q = scores.at(ids[i]);
        const auto rewards = score_candidates(q, parses[i], rollout.r_invalid);
        const Selection sel = select_executed(rewards, parses[i], max_pressure(env, ids[i]));
        RolloutRecord rec;
        rec.step = step;
        rec.intersection = net.intersection(ids[i]).name;
        rec.prompt = prompts[i].text;
        rec.q_values = q;
        for (size_t j = 0; j < samples[i].size(); ++j) {
          rec.candidates.push_back({samples[i][j].text, parses[i][j], rewards[j]});
        }
        rec.executed = sel.phase;
        rec.fallback = sel.fallback;
        rec.js = js;
        joint[ids[i]] = sel.phase;
        batch.push_back(std::move(rec));
      }
    } catch (const TransportError& e) {
      result.truncated = true;
      result.error = e.what();
      break;
    }
    for (auto& r : batch) result.records.push_back(std::move(r));
    env.apply_actions(joint);
    env.advance_to_boundary();
  }
  result.metrics = env.metrics();
  return result;
}

}  // namespace dglight
