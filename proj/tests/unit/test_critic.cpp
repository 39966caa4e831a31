#include "doctest.h"
#include "helpers.hpp"

#include "dglight/critic.hpp"
#include "dglight/error.hpp"
#include "dglight/network_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <set>

using namespace dglight;

namespace {

CriticConfig tiny_config() {
  CriticConfig cfg;
  cfg.embed_dim = 3;
  cfg.heads = 2;
  cfg.head_dim = 2;
  cfg.hidden_dim = 3;
  cfg.feature_scale = 0.5;
  return cfg;
}

// Plain-loop forward pass used as an independent oracle.
std::vector<std::array<double, 4>> oracle_q(const ParamMap& p, const CriticConfig& cfg,
                                            const Tensor& x, const Adjacency& adj) {
  const Eigen::Index n = x.rows();
  auto dense = [](const Tensor& in, const Tensor& w, const Tensor& b, bool act) {
    Tensor out(in.rows(), w.cols());
    for (Eigen::Index r = 0; r < in.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) {
        double s = b(0, c);
        for (Eigen::Index k = 0; k < in.cols(); ++k) s += in(r, k) * w(k, c);
        out(r, c) = act ? std::max(0.0, s) : s;
      }
    }
    return out;
  };
  const Tensor zero_b = Tensor::Zero(1, cfg.head_dim);
  Tensor h = dense(x * cfg.feature_scale, p.at("embed.w"), p.at("embed.b"), true);
  Tensor cat(n, cfg.heads * cfg.head_dim);
  for (int k = 0; k < cfg.heads; ++k) {
    const std::string base = "attn0.";
    const Tensor q = dense(h, p.at(base + "q" + std::to_string(k)), zero_b, false);
    const Tensor kk = dense(h, p.at(base + "k" + std::to_string(k)), zero_b, false);
    const Tensor v = dense(h, p.at(base + "v" + std::to_string(k)), zero_b, false);
    for (Eigen::Index i = 0; i < n; ++i) {
      std::vector<int> keys{static_cast<int>(i)};
      keys.insert(keys.end(), adj[i].begin(), adj[i].end());
      std::vector<double> s;
      for (int j : keys) s.push_back(q.row(i).dot(kk.row(j)) / std::sqrt(double(cfg.head_dim)));
      const double top = *std::max_element(s.begin(), s.end());
      double z = 0.0;
      for (double& e : s) z += (e = std::exp(e - top));
      for (int d = 0; d < cfg.head_dim; ++d) {
        double acc = 0.0;
        for (size_t m = 0; m < keys.size(); ++m) acc += s[m] / z * v(keys[m], d);
        cat(i, k * cfg.head_dim + d) = acc;
      }
    }
  }
  h = dense(cat, p.at("attn0.out.w"), p.at("attn0.out.b"), true);
  const Tensor hidden = dense(h, p.at("q.hidden.w"), p.at("q.hidden.b"), true);
  const Tensor q = dense(hidden, p.at("q.out.w"), p.at("q.out.b"), false);
  std::vector<std::array<double, 4>> out(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int a = 0; a < 4; ++a) out[i][a] = q(i, a);
  }
  return out;
}

// Random params with nonzero biases so relu units are mixed.
ParamMap random_params(const CriticConfig& cfg, std::uint64_t seed) {
  ParamMap p = init_critic_params(cfg, seed);
  std::mt19937_64 rng(seed + 1);
  for (auto& [name, t] : p) t = testing::random_tensor(t.rows(), t.cols(), rng, -0.8, 0.8);
  return p;
}

Tensor random_state(Eigen::Index n, std::mt19937_64& rng) {
  Tensor s = testing::random_tensor(n, kObservationFeatures, rng, 0.0, 4.0);
  return s.array().round().matrix();
}

Transition random_transition(Eigen::Index n, std::mt19937_64& rng) {
  Transition t;
  t.state = random_state(n, rng);
  t.next_state = random_state(n, rng);
  for (Eigen::Index i = 0; i < n; ++i) {
    t.actions.push_back(phase_at(static_cast<int>(rng() % 4)));
    t.rewards.push_back(-0.25 * static_cast<double>(rng() % 9));
  }
  return t;
}

SimState ew_env(std::uint64_t seed, bool turns = true) {
  auto net = std::make_shared<const RoadNetwork>(RoadNetwork::grid(1, 1, 300.0));
  DemandProfile d;
  d.ew_through_headway = 3.0;
  d.ns_through_headway = turns ? 20.0 : 600.0;
  d.left_headway = turns ? 60.0 : 0.0;
  d.right_headway = turns ? 60.0 : 0.0;
  return SimState(net, synthetic_flow(*net, d, seed), {}, seed);
}

}  // namespace

TEST_SUITE("critic") {

TEST_CASE("encode zero-traffic observation") {
  IntersectionObservation obs;
  const Eigen::RowVectorXd f = encode_obs(obs);
  REQUIRE(f.size() == 36);
  for (int i = 0; i < 32; ++i) CHECK(f(i) == 0.0);
  CHECK(f.tail(4) == Eigen::RowVector4d(1, 0, 0, 0));
  obs.current = Phase::kNLSL;
  CHECK(encode_obs(obs).tail(4) == Eigen::RowVector4d(0, 0, 0, 1));
}

TEST_CASE("encode the prompt fixture") {
  const Eigen::RowVectorXd f = encode_obs(testing::sample_observation());
  // Lane slot s occupies [4s, 4s+4): queued, seg1, seg2, seg3.
  const int east_through = 2 * index_of(Phase::kETWT) + 0;
  const int west_through = 2 * index_of(Phase::kETWT) + 1;
  CHECK(f(4 * east_through + 2) == 1.0);
  CHECK(f(4 * west_through + 3) == 2.0);
  CHECK(f(4 * west_through + 0) == 1.0);
  CHECK(f.head(32).sum() == 6.0);
}

TEST_CASE("encoding counts only") {
  SimState a = build_grid(1, 1, 300.0, FlowSpec{}, 0);
  SimState b = a;
  const IntersectionId c = a.network().controlled().front();
  const LaneId lane = a.network().intersection(c).incoming_lane(Direction::kEast, Movement::kThrough);
  std::vector<LaneId> route{lane};
  while (!a.network().is_exit(route.back())) route.push_back(a.network().next_lane(route.back(), Movement::kThrough));
  a.add_vehicle(route, 0, 110.0, 11.0);
  a.add_vehicle(route, 0, 180.0, 11.0);
  b.add_vehicle(route, 0, 130.0, 9.0);
  b.add_vehicle(route, 0, 160.0, 7.0);
  CHECK(encode_obs(a.observe(c)) == encode_obs(b.observe(c)));
}

TEST_CASE("q_forward matches a plain-loop oracle") {
  const CriticConfig cfg = tiny_config();
  const RoadNetwork net = RoadNetwork::grid(2, 2, 300.0);
  const Adjacency adj = critic_adjacency(net);
  std::mt19937_64 rng(3);
  const ParamMap p = random_params(cfg, 5);
  std::vector<IntersectionObservation> obs(4);
  Tensor x(4, 36);
  for (int i = 0; i < 4; ++i) {
    for (auto& lane : obs[i].lanes) {
      lane.queued = static_cast<int>(rng() % 5);
      for (int& s : lane.segments) s = static_cast<int>(rng() % 3);
    }
    obs[i].current = phase_at(i);
    x.row(i) = encode_obs(obs[i]);
  }
  const auto q = q_forward(p, cfg, obs, adj);
  const auto expect = oracle_q(p, cfg, x, adj);
  REQUIRE(q.size() == 4);
  for (int i = 0; i < 4; ++i) {
    for (int a = 0; a < 4; ++a) CHECK(q[i].values[a] == doctest::Approx(expect[i][a]).epsilon(1e-12));
  }
  CHECK_THROWS_AS(q_forward(p, cfg, {obs[0]}, adj), Error);
}

TEST_CASE("isolated intersection attends only to itself") {
  const CriticConfig cfg = tiny_config();
  const ParamMap p = random_params(cfg, 7);
  const Adjacency adj = critic_adjacency(RoadNetwork::grid(1, 1, 300.0));
  REQUIRE(adj.size() == 1);
  CHECK(adj[0].empty());
  const AttentionMask mask = attention_mask(adj);
  Graph g;
  std::map<std::string, Var> leaves;
  for (const auto& [name, t] : p) leaves.emplace(name, g.leaf(t));
  std::mt19937_64 rng(1);
  critic_forward(g, leaves, random_state(1, rng), mask, cfg);
  int seen = 0;
  for (size_t i = 0; i < g.size(); ++i) {
    const Node& n = g.node(static_cast<NodeId>(i));
    if (n.op != OpKind::kAttention) continue;
    ++seen;
    REQUIRE(n.aux.size() == 1);
    CHECK(n.aux(0, 0) == 1.0);
  }
  CHECK(seen == cfg.heads);
}

TEST_CASE("neighbour order and relabelling do not change outputs") {
  const CriticConfig cfg = tiny_config();
  const RoadNetwork net = RoadNetwork::grid(3, 3, 300.0);
  const Adjacency adj = critic_adjacency(net);
  const ParamMap p = random_params(cfg, 11);
  std::mt19937_64 rng(9);
  std::vector<IntersectionObservation> obs(adj.size());
  for (auto& o : obs) {
    for (auto& lane : o.lanes) lane.queued = static_cast<int>(rng() % 6);
  }
  const auto base = q_forward(p, cfg, obs, adj);

  Adjacency reversed = adj;
  for (auto& nb : reversed) std::reverse(nb.begin(), nb.end());
  const auto r = q_forward(p, cfg, obs, reversed);
  for (size_t i = 0; i < obs.size(); ++i) {
    for (int a = 0; a < 4; ++a) CHECK(std::abs(r[i].values[a] - base[i].values[a]) <= 1e-12);
  }

  std::vector<int> perm(adj.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<int> where(adj.size());
  for (size_t k = 0; k < perm.size(); ++k) where[perm[k]] = static_cast<int>(k);
  Adjacency relabelled(adj.size());
  std::vector<IntersectionObservation> pobs(adj.size());
  for (size_t k = 0; k < perm.size(); ++k) {
    pobs[k] = obs[perm[k]];
    for (int j : adj[perm[k]]) relabelled[k].push_back(where[j]);
  }
  const auto pq = q_forward(p, cfg, pobs, relabelled);
  for (size_t k = 0; k < perm.size(); ++k) {
    for (int a = 0; a < 4; ++a) {
      CHECK(std::abs(pq[k].values[a] - base[perm[k]].values[a]) <= 1e-12);
    }
  }
}

TEST_CASE("bellman loss trivial cases") {
  CriticConfig cfg = tiny_config();
  ParamMap p = random_params(cfg, 2);
  p["q.out.w"].setZero();
  p["q.out.b"].setZero();
  const Adjacency adj = critic_adjacency(RoadNetwork::grid(1, 1, 300.0));
  std::mt19937_64 rng(4);
  Transition t = random_transition(1, rng);
  t.rewards = {1.0};
  cfg.gamma = 0.0;
  CHECK(bellman_loss(p, p, {&t}, adj, cfg).loss == 1.0);
  cfg.gamma = 0.8;
  t.rewards = {0.0};
  CHECK(bellman_loss(p, p, {&t}, adj, cfg).loss == 0.0);
  CHECK_THROWS_AS(bellman_loss(p, p, {}, adj, cfg), Error);
}

TEST_CASE("bellman loss on a hand-built two-transition batch") {
  const CriticConfig cfg = tiny_config();
  const RoadNetwork net = RoadNetwork::grid(1, 2, 300.0);
  const Adjacency adj = critic_adjacency(net);
  const ParamMap online = random_params(cfg, 31);
  const ParamMap target = random_params(cfg, 32);
  std::mt19937_64 rng(6);
  const Transition t1 = random_transition(2, rng);
  const Transition t2 = random_transition(2, rng);

  double acc = 0.0;
  for (const Transition* t : {&t1, &t2}) {
    const auto q = oracle_q(online, cfg, t->state, adj);
    const auto qn = oracle_q(target, cfg, t->next_state, adj);
    for (int i = 0; i < 2; ++i) {
      const double y = t->rewards[i] + cfg.gamma * *std::max_element(qn[i].begin(), qn[i].end());
      const double d = y - q[i][index_of(t->actions[i])];
      acc += d * d;
    }
  }
  const double expect = acc / 4.0;
  CHECK(std::abs(bellman_loss(online, target, {&t1, &t2}, adj, cfg).loss - expect) <= 1e-10);
}

TEST_CASE("bellman gradient matches finite differences") {
  const CriticConfig cfg = tiny_config();
  const Adjacency adj = critic_adjacency(RoadNetwork::grid(1, 2, 300.0));
  const ParamMap online = random_params(cfg, 41);
  const ParamMap target = random_params(cfg, 42);
  std::mt19937_64 rng(8);
  std::vector<Transition> ts;
  for (int k = 0; k < 3; ++k) ts.push_back(random_transition(2, rng));
  std::vector<const Transition*> batch;
  for (const auto& t : ts) batch.push_back(&t);

  const BellmanResult r = bellman_loss(online, target, batch, adj, cfg);
  CHECK(r.gradients.size() == online.size());
  for (const auto& [name, value] : online) {
    auto f = [&, name = name](const Tensor& x) {
      ParamMap q = online;
      q[name] = x;
      return bellman_loss(q, target, batch, adj, cfg).loss;
    };
    const Tensor num = testing::numeric_grad(f, value);
    INFO(name);
    CHECK(testing::max_rel_err(r.gradients.at(name), num) < 1e-3);
  }
}

TEST_CASE("target parameters carry no gradient") {
  // Moving the target changes the loss, but the online gradient still
  // equals the derivative with the target held fixed.
  const CriticConfig cfg = tiny_config();
  const Adjacency adj = critic_adjacency(RoadNetwork::grid(1, 1, 300.0));
  const ParamMap p = random_params(cfg, 51);
  std::mt19937_64 rng(2);
  const Transition t = random_transition(1, rng);
  const BellmanResult shared = bellman_loss(p, p, {&t}, adj, cfg);
  const Tensor& w = p.at("q.out.w");
  auto online_only = [&](const Tensor& x) {
    ParamMap q = p;
    q["q.out.w"] = x;
    return bellman_loss(q, p, {&t}, adj, cfg).loss;
  };
  CHECK(testing::max_rel_err(shared.gradients.at("q.out.w"), testing::numeric_grad(online_only, w)) <
        1e-3);
}

TEST_CASE("epsilon schedule") {
  CHECK(epsilon(0) == 0.8);
  CHECK(epsilon(5) == 0.6190247499999999);
  CHECK(epsilon(5) == std::max(0.8 * std::pow(0.95, 5), 0.2));
  CHECK(epsilon(100) == 0.2);
  CHECK(epsilon(1000) == 0.2);
  for (int r = 0; r < 60; ++r) CHECK(epsilon(r + 1) <= epsilon(r));
}

TEST_CASE("queue reward is -0.25 per queued vehicle") {
  SimState s = build_grid(1, 1, 300.0, FlowSpec{}, 0);
  const IntersectionId c = s.network().controlled().front();
  const LaneId lane = s.network().intersection(c).incoming_lane(Direction::kNorth, Movement::kThrough);
  std::vector<LaneId> route{lane};
  while (!s.network().is_exit(route.back())) route.push_back(s.network().next_lane(route.back(), Movement::kThrough));
  for (int k = 0; k < 4; ++k) s.add_vehicle(route, 0, 300.0 - 7.5 * k, 0.0);
  s.step();
  CHECK(s.intersection_queue(c) == 4);
  CHECK(queue_reward(s, c, CriticConfig{}) == -1.0);
}

TEST_CASE("replay buffer is a bounded FIFO") {
  ReplayBuffer buf(3);
  std::mt19937_64 rng(1);
  for (int k = 0; k < 5; ++k) {
    Transition t = random_transition(1, rng);
    t.rewards = {static_cast<double>(k)};
    buf.push(std::move(t));
  }
  REQUIRE(buf.size() == 3);
  CHECK(buf.items().front().rewards[0] == 2.0);
  CHECK(buf.items().back().rewards[0] == 4.0);
  const auto s = buf.sample(10, rng);
  CHECK(s.size() == 3);
  std::set<const Transition*> distinct(s.begin(), s.end());
  CHECK(distinct.size() == 3);
}

TEST_CASE("config validation and json") {
  CriticConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.gamma = 1.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = CriticConfig{};
  cfg.sample_size = cfg.buffer_capacity + 1;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = tiny_config();
  cfg.seed = 77;
  const CriticConfig back = critic_config_from_json(critic_config_to_json(cfg));
  CHECK(critic_config_to_json(back) == critic_config_to_json(cfg));
}

TEST_CASE("zero rounds returns the initial parameters") {
  CriticConfig cfg = tiny_config();
  cfg.seed = 12;
  const TrainResult r = train_critic([](int) { return ew_env(1); }, cfg, 0);
  CHECK(r.log.empty());
  CHECK(r.params == init_critic_params(cfg, 12));
}

TEST_CASE("short training run is logged and reproducible") {
  CriticConfig cfg = tiny_config();
  cfg.episode = {300, 30};
  cfg.buffer_capacity = 100;
  cfg.sample_size = 30;
  cfg.batch_size = 15;
  cfg.epochs = 2;
  cfg.target_update_interval = 2;
  cfg.seed = 3;
  std::vector<RoundLog> seen;
  const auto make = [](int round) { return ew_env(50 + round); };
  const TrainResult a = train_critic(make, cfg, 3, [&](const RoundLog& l) { seen.push_back(l); });
  const TrainResult b = train_critic(make, cfg, 3);
  REQUIRE(a.log.size() == 3);
  CHECK(seen.size() == 3);
  CHECK(a.params == b.params);
  CHECK_FALSE(a.params == init_critic_params(cfg, cfg.seed));
  for (int r = 0; r < 3; ++r) {
    CHECK(a.log[r].round == r);
    CHECK(a.log[r].epsilon == epsilon(cfg, r));
    CHECK(a.log[r].buffer_size == static_cast<size_t>(10 * (r + 1)));
    CHECK(a.log[r].greedy_metrics.att > 0.0);
  }
  // Ten transitions cannot fill a batch of fifteen.
  CHECK(a.log[0].skipped_update);
  CHECK_FALSE(a.log[1].skipped_update);
}

TEST_CASE("save, load and freeze") {
  const CriticConfig cfg = tiny_config();
  const ParamMap p = random_params(cfg, 61);
  const auto dir = testing::temp_dir("critic");
  save_critic(dir / "critic.json", p, cfg);
  const FrozenCritic frozen = load_critic(dir / "critic.json");
  CHECK(frozen.params() == p);
  for (const auto& [name, t] : p) {
    CHECK(std::memcmp(t.data(), frozen.params().at(name).data(), sizeof(double) * t.size()) == 0);
  }
  const SimState s = ew_env(5);
  const FrozenCritic direct = freeze(p, cfg);
  CHECK(direct.q_forward(s) == frozen.q_forward(s));
  CHECK(frozen.q_forward(s) == frozen.q_forward(s));

  nlohmann::json doc = read_json_file(dir / "critic.json");
  doc["schema_version"] = "9";
  write_json_file(dir / "bad.json", doc);
  CHECK_THROWS_AS(load_critic(dir / "bad.json"), SchemaError);
}

TEST_CASE("greedy critic favours the dominant east-west phase") {
  CriticConfig cfg;
  cfg.buffer_capacity = 2000;
  cfg.sample_size = 500;
  cfg.seed = 1;
  // Max pressure serves any stopped vehicle, so cross traffic is kept sparse
  // and turning traffic off for east-west through to dominate.
  const TrainResult r =
      train_critic([](int round) { return ew_env(100 + round, false); }, cfg, 20);

  auto share = [&](const Controller& inner) {
    int etwt = 0, total = 0;
    const Controller counting = [&](const SimState& s, std::int64_t k) {
      JointAction j = inner(s, k);
      for (const auto& [id, p] : j) {
        etwt += p == Phase::kETWT;
        ++total;
      }
      return j;
    };
    SimState env = ew_env(999, false);
    run_episode(env, counting, cfg.episode);
    return static_cast<double>(etwt) / total;
  };
  const double greedy = share(critic_greedy_controller(freeze(r.params, cfg)));
  const double oracle = share(max_pressure_controller());
  MESSAGE("ETWT share: critic " << greedy << ", max pressure " << oracle);
  CHECK(oracle >= 0.8);
  CHECK(greedy >= 0.8);
}

}  // TEST_SUITE
