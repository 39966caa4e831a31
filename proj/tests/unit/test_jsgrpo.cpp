#include "doctest.h"
#include "helpers.hpp"

#include "dglight/baselines.hpp"
#include "dglight/error.hpp"
#include "dglight/jsgrpo.hpp"

#include <map>

using namespace dglight;

namespace {

const ParseResult kInvalid = ParseResult::invalid(InvalidReason::kMultipleTags);

ParseResult ok(Phase p) { return ParseResult::ok(p); }

SimState busy_env(int rows, int cols, std::uint64_t seed) {
  const RoadNetwork net = RoadNetwork::grid(rows, cols, 300.0);
  DemandProfile d;
  d.ew_through_headway = 4.0;
  d.ns_through_headway = 5.0;
  d.left_headway = 15.0;
  d.right_headway = 15.0;
  return build_grid(rows, cols, 300.0, synthetic_flow(net, d, seed), seed);
}

// Warmed-up state at a decision boundary.
SimState warm(int rows, int cols, std::uint64_t seed) {
  SimState s = busy_env(rows, cols, seed);
  s.advance_to_boundary();
  for (int k = 0; k < 6; ++k) {
    JointAction j;
    for (IntersectionId id : s.network().controlled()) j[id] = fixed_time(FixedTimePlan{}, k);
    s.apply_actions(j);
    s.advance_to_boundary();
  }
  return s;
}

JointCandidate joint_of(const SimState& s, const std::vector<ParseResult>& parses) {
  JointCandidate j;
  const auto& ids = s.network().controlled();
  for (size_t i = 0; i < ids.size(); ++i) j.actions[ids[i]] = parses[i];
  return j;
}

}  // namespace

TEST_SUITE("jsgrpo") {

TEST_CASE("candidate alignment") {
  const auto joints = align_candidates({3, 8}, {{ok(Phase::kETWT), ok(Phase::kNTST)},
                                               {ok(Phase::kELWL), ok(Phase::kNLSL)}}, 2);
  REQUIRE(joints.size() == 2);
  CHECK(joints[0].actions.at(3) == ok(Phase::kETWT));
  CHECK(joints[0].actions.at(8) == ok(Phase::kELWL));
  CHECK(joints[1].actions.at(3) == ok(Phase::kNTST));
  CHECK(joints[1].actions.at(8) == ok(Phase::kNLSL));

  CHECK(align_candidates({3, 8}, {{ok(Phase::kETWT)}, {ok(Phase::kNTST)}}, 1).size() == 1);

  const auto with_bad = align_candidates({3, 8}, {{ok(Phase::kETWT), ok(Phase::kNTST)},
                                                  {ok(Phase::kELWL), kInvalid}}, 2);
  CHECK_FALSE(with_bad[1].actions.at(8).valid());

  CHECK_THROWS_AS(align_candidates({3, 8}, {{ok(Phase::kETWT), ok(Phase::kNTST)}, {ok(Phase::kELWL)}}, 2),
                  Error);
}

TEST_CASE("mixed reward hand case and reductions") {
  const Adjacency pair{{1}, {0}};
  CHECK(mixed_reward({4, 0}, pair, 0.5, 0.3) == -2.0);
  CHECK(mixed_reward({0, 0}, pair, 0.6, 0.3) == 0.0);

  const Adjacency grid = critic_adjacency(RoadNetwork::grid(2, 3, 300.0));
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> m(grid.size());
    double total = 0.0;
    for (double& x : m) total += (x = static_cast<double>(rng() % 12));
    const double mean = total / static_cast<double>(m.size());
    CHECK(mixed_reward(m, grid, 1.0, 0.0) == -mean);
    CHECK(mixed_reward(m, grid, 0.0, 0.0) == -mean);
  }
  // Isolated intersection: neighbour mean is 0.
  CHECK(mixed_reward({5}, Adjacency{{}}, 0.0, 1.0) == 0.0);
}

TEST_CASE("mixed reward reads queues from the state") {
  const SimState s = warm(2, 2, 4);
  std::vector<double> m;
  for (IntersectionId id : s.network().controlled()) m.push_back(s.intersection_queue(id));
  CHECK(mixed_reward(s, 0.6, 0.3) == mixed_reward(m, critic_adjacency(s.network()), 0.6, 0.3));
}

TEST_CASE("discounted return of unit penalties") {
  const SimState s = warm(1, 1, 1);
  const Snapshot snap(s);
  const MockPolicy policy({});
  ForkContext ctx{&policy, 0, 5, [](const SimState&) { return -1.0; }};
  const JointCandidate j = joint_of(s, {ok(Phase::kNTST)});
  CHECK(evaluate_candidate(snap, j, JSConfig::h3(), ctx) == -2.44);
  JSConfig one;
  one.horizon = 1;
  CHECK(evaluate_candidate(snap, j, one, ctx) == -1.0);
  CHECK(JSConfig{}.gamma == 0.8);
  CHECK(JSConfig::h6().horizon == 6);
}

TEST_CASE("horizon one and zero discount reduce to the first reward") {
  const SimState s = warm(2, 2, 6);
  const Snapshot snap(s);
  const MockPolicy policy({});
  const JointCandidate j =
      joint_of(s, {ok(Phase::kNTST), ok(Phase::kETWT), ok(Phase::kNLSL), ok(Phase::kELWL)});

  SimState direct = snap.restore();
  JointAction ja;
  for (const auto& [id, p] : j.actions) ja[id] = *p.phase;
  direct.apply_actions(ja);
  direct.advance_to_boundary();
  const JSConfig cfg;
  const double first = mixed_reward(direct, cfg.alpha, cfg.beta);

  JSConfig h1;
  h1.horizon = 1;
  CHECK(evaluate_candidate(snap, j, h1, {nullptr, 0, 1, {}}) == first);
  JSConfig g0;
  g0.gamma = 0.0;
  CHECK(evaluate_candidate(snap, j, g0, {&policy, 0, 1, {}}) == first);
}

TEST_CASE("invalid entries execute max pressure inside the fork") {
  const SimState s = warm(2, 2, 7);
  const Snapshot snap(s);
  std::vector<ParseResult> parses{ok(Phase::kNTST), kInvalid, ok(Phase::kELWL), kInvalid};
  std::vector<ParseResult> explicit_mp = parses;
  const auto& ids = s.network().controlled();
  explicit_mp[1] = ok(max_pressure(s, ids[1]));
  explicit_mp[3] = ok(max_pressure(s, ids[3]));
  JSConfig h1;
  h1.horizon = 1;
  CHECK(evaluate_candidate(snap, joint_of(s, parses), h1, {}) ==
        evaluate_candidate(snap, joint_of(s, explicit_mp), h1, {}));
}

TEST_CASE("forks leave the parent untouched") {
  const SimState s = warm(2, 2, 8);
  const Snapshot snap(s);
  const MockPolicy policy({});
  const JSConfig cfg = JSConfig::h6();
  const JointCandidate j =
      joint_of(s, {ok(Phase::kETWT), ok(Phase::kETWT), ok(Phase::kNTST), ok(Phase::kNTST)});
  const double a = evaluate_candidate(snap, j, cfg, {&policy, 3, 9, {}});
  const JointCandidate other =
      joint_of(s, {ok(Phase::kNLSL), ok(Phase::kELWL), ok(Phase::kNLSL), ok(Phase::kELWL)});
  evaluate_candidate(snap, other, cfg, {&policy, 3, 9, {}});
  CHECK(snap.state() == s);
  CHECK(evaluate_candidate(snap, j, cfg, {&policy, 3, 9, {}}) == a);

  JSConfig cheap = cfg;
  cheap.cheap = true;
  CHECK(evaluate_candidate(snap, j, cheap, {nullptr, 3, 9, {}}) < 0.0);
}

TEST_CASE("projected scores") {
  const std::vector<JointCandidate> joints{
      {0, {{1, ok(Phase::kETWT)}}}, {1, {{1, ok(Phase::kETWT)}}}, {2, {{1, ok(Phase::kNTST)}}}};
  const auto q = project_scores(joints, {2.0, 4.0, -1.0}, -7.0);
  CHECK(q.at(1)[Phase::kETWT] == 3.0);
  CHECK(q.at(1)[Phase::kNTST] == -1.0);
  CHECK(q.at(1)[Phase::kNLSL] == -7.0);
  CHECK(q.at(1)[Phase::kELWL] == -7.0);

  const auto single = project_scores({{0, {{1, ok(Phase::kELWL)}, {2, kInvalid}}}}, {-0.5}, 0.0);
  CHECK(single.at(1)[Phase::kELWL] == -0.5);
  CHECK(single.at(2) == QVector{});
}

TEST_CASE("projected scores match a brute-force oracle") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(-10, 0);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 5);
    const int k = 1 + static_cast<int>(rng() % 8);
    std::vector<JointCandidate> joints(k);
    std::vector<double> returns(k);
    for (int j = 0; j < k; ++j) {
      joints[j].index = j;
      returns[j] = u(rng);
      for (int i = 0; i < n; ++i) {
        const int draw = static_cast<int>(rng() % 5);
        joints[j].actions[i] = draw == 4 ? kInvalid : ok(phase_at(draw));
      }
    }
    const double fallback = u(rng);
    const auto got = project_scores(joints, returns, fallback);
    for (int i = 0; i < n; ++i) {
      for (Phase p : kAllPhases) {
        double s = 0.0;
        int c = 0;
        for (int j = 0; j < k; ++j) {
          if (joints[j].actions.at(i) == ok(p)) {
            s += returns[j];
            ++c;
          }
        }
        CHECK(got.at(i)[p] == (c ? s / c : fallback));
      }
    }
  }
}

TEST_CASE("joint-scored episode records") {
  RolloutConfig rc;
  rc.episode = {300, 30};
  JSConfig cfg;
  const EpisodeResult r = collect_js_episode(busy_env(2, 2, 3), MockPolicy({}), rc, cfg);
  REQUIRE(r.records.size() == 10 * 4);
  for (const RolloutRecord& rec : r.records) {
    REQUIRE(rec.js.has_value());
    CHECK(rec.js->at("H") == 3);
    CHECK(rec.js->at("gamma") == 0.8);
    CHECK(rec.js->at("cheap") == false);
    std::vector<ParseResult> parses;
    std::vector<double> rewards;
    for (const Candidate& c : rec.candidates) {
      parses.push_back(c.parse);
      rewards.push_back(c.reward);
    }
    CHECK(score_candidates(rec.q_values, parses, rc.r_invalid) == rewards);
    for (const Candidate& c : rec.candidates) {
      if (c.parse.valid()) CHECK(c.reward <= 0.0);
    }
  }
  const auto dir = testing::temp_dir("js_records");
  persist_records(r.records, dir / "js.jsonl");
  CHECK(load_records(dir / "js.jsonl") == r.records);

  const EpisodeResult again = collect_js_episode(busy_env(2, 2, 3), MockPolicy({}), rc, cfg);
  CHECK(again.records == r.records);
  CHECK(again.metrics == r.metrics);
}

TEST_CASE("config validation and json") {
  JSConfig c;
  CHECK_NOTHROW(c.validate());
  c.horizon = 0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = JSConfig::h6();
  c.alpha = 0.5;
  c.cheap = true;
  const JSConfig back = js_config_from_json(js_config_to_json(c));
  CHECK(js_config_to_json(back) == js_config_to_json(c));
}

}  // TEST_SUITE
