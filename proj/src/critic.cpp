#include "dglight/critic.hpp"

#include "dglight/adam.hpp"
#include "dglight/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace dglight {

using nlohmann::json;

namespace {

std::string layer_key(int layer, const std::string& part) {
  return "attn" + std::to_string(layer) + "." + part;
}

std::string head_key(int layer, const char* which, int head) {
  return layer_key(layer, std::string(which) + std::to_string(head));
}

std::map<std::string, Var> make_leaves(Graph& g, const ParamMap& params) {
  std::map<std::string, Var> leaves;
  for (const auto& [name, t] : params) leaves.emplace(name, g.leaf(t));
  return leaves;
}

const Var& need(const std::map<std::string, Var>& leaves, const std::string& name) {
  auto it = leaves.find(name);
  if (it == leaves.end()) throw Error("critic: missing parameter " + name);
  return it->second;
}

Tensor evaluate(const ParamMap& params, const Tensor& features, const AttentionMask& mask,
                const CriticConfig& cfg) {
  Graph g;
  const auto leaves = make_leaves(g, params);
  return critic_forward(g, leaves, features, mask, cfg).value();
}

Tensor stack(const std::vector<const Transition*>& batch, bool next) {
  const Index n = (next ? batch.front()->next_state : batch.front()->state).rows();
  Tensor out(n * static_cast<Index>(batch.size()), kObservationFeatures);
  for (size_t b = 0; b < batch.size(); ++b) {
    out.middleRows(static_cast<Index>(b) * n, n) = next ? batch[b]->next_state : batch[b]->state;
  }
  return out;
}

}  // namespace

Phase QVector::argmax() const {
  int best = 0;
  for (int i = 1; i < kNumPhases; ++i) {
    if (values[i] > values[best]) best = i;
  }
  return phase_at(best);
}

void CriticConfig::validate() const {
  if (!(gamma > 0.0 && gamma < 1.0)) throw Error("critic config: gamma must be in (0, 1)");
  if (!(buffer_capacity >= sample_size && sample_size >= batch_size && batch_size >= 1)) {
    throw Error("critic config: need capacity >= sample size >= batch size >= 1");
  }
  if (embed_dim < 1 || heads < 1 || head_dim < 1 || attention_layers < 0 || hidden_dim < 1) {
    throw Error("critic config: layer sizes must be positive");
  }
  if (epochs < 0 || target_update_interval < 1 || !(learning_rate > 0.0)) {
    throw Error("critic config: bad optimisation settings");
  }
  episode.decisions();
}

json critic_config_to_json(const CriticConfig& c) {
  return {{"embed_dim", c.embed_dim},
          {"heads", c.heads},
          {"head_dim", c.head_dim},
          {"attention_layers", c.attention_layers},
          {"hidden_dim", c.hidden_dim},
          {"feature_scale", c.feature_scale},
          {"gamma", c.gamma},
          {"buffer_capacity", c.buffer_capacity},
          {"sample_size", c.sample_size},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"target_update_interval", c.target_update_interval},
          {"learning_rate", c.learning_rate},
          {"epsilon_start", c.epsilon_start},
          {"epsilon_decay", c.epsilon_decay},
          {"epsilon_floor", c.epsilon_floor},
          {"reward_scale", c.reward_scale},
          {"episode_s", c.episode.episode_s},
          {"interval_s", c.episode.interval_s},
          {"seed", c.seed}};
}

CriticConfig critic_config_from_json(const json& j) {
  CriticConfig c;
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.heads = j.value("heads", c.heads);
  c.head_dim = j.value("head_dim", c.head_dim);
  c.attention_layers = j.value("attention_layers", c.attention_layers);
  c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
  c.feature_scale = j.value("feature_scale", c.feature_scale);
  c.gamma = j.value("gamma", c.gamma);
  c.buffer_capacity = j.value("buffer_capacity", c.buffer_capacity);
  c.sample_size = j.value("sample_size", c.sample_size);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.target_update_interval = j.value("target_update_interval", c.target_update_interval);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.epsilon_start = j.value("epsilon_start", c.epsilon_start);
  c.epsilon_decay = j.value("epsilon_decay", c.epsilon_decay);
  c.epsilon_floor = j.value("epsilon_floor", c.epsilon_floor);
  c.reward_scale = j.value("reward_scale", c.reward_scale);
  c.episode.episode_s = j.value("episode_s", c.episode.episode_s);
  c.episode.interval_s = j.value("interval_s", c.episode.interval_s);
  c.seed = j.value("seed", c.seed);
  return c;
}

Eigen::RowVectorXd encode_obs(const IntersectionObservation& obs) {
  Eigen::RowVectorXd f = Eigen::RowVectorXd::Zero(kObservationFeatures);
  for (int slot = 0; slot < kControlledLanes; ++slot) {
    const LaneCounts& lane = obs.lanes[slot];
    f(4 * slot) = lane.queued;
    for (int s = 0; s < 3; ++s) f(4 * slot + 1 + s) = lane.segments[s];
  }
  f(4 * kControlledLanes + index_of(obs.current)) = 1.0;
  return f;
}

Adjacency critic_adjacency(const RoadNetwork& net) {
  const auto& ids = net.controlled();
  std::map<IntersectionId, int> local;
  for (size_t i = 0; i < ids.size(); ++i) local[ids[i]] = static_cast<int>(i);
  Adjacency adj(ids.size());
  for (size_t i = 0; i < ids.size(); ++i) {
    for (IntersectionId n : net.real_neighbors(ids[i])) adj[i].push_back(local.at(n));
  }
  return adj;
}

AttentionMask attention_mask(const Adjacency& adjacency, int copies) {
  const auto n = static_cast<Index>(adjacency.size());
  AttentionMask mask = AttentionMask::Constant(n * copies, n * copies, false);
  for (int c = 0; c < copies; ++c) {
    const Index base = c * n;
    for (Index i = 0; i < n; ++i) {
      mask(base + i, base + i) = true;
      for (int j : adjacency[i]) {
        if (j < 0 || j >= n) throw Error("attention_mask: neighbour index out of range");
        mask(base + i, base + j) = true;
      }
    }
  }
  return mask;
}

ParamMap init_critic_params(const CriticConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  ParamMap p;
  auto dense = [&](const std::string& name, Index in, Index out) {
    p[name + ".w"] = glorot_uniform(in, out, rng);
    p[name + ".b"] = Tensor::Zero(1, out);
  };
  dense("embed", kObservationFeatures, cfg.embed_dim);
  for (int l = 0; l < cfg.attention_layers; ++l) {
    for (int h = 0; h < cfg.heads; ++h) {
      for (const char* which : {"q", "k", "v"}) {
        p[head_key(l, which, h)] = glorot_uniform(cfg.embed_dim, cfg.head_dim, rng);
      }
    }
    dense(layer_key(l, "out"), static_cast<Index>(cfg.heads) * cfg.head_dim, cfg.embed_dim);
  }
  dense("q.hidden", cfg.embed_dim, cfg.hidden_dim);
  dense("q.out", cfg.hidden_dim, kNumPhases);
  return p;
}

Var critic_forward(Graph& g, const std::map<std::string, Var>& leaves, const Tensor& features,
                   const AttentionMask& mask, const CriticConfig& cfg) {
  if (features.cols() != kObservationFeatures) throw Error("critic: expected 36 features per row");
  Var x = g.leaf(features * cfg.feature_scale);
  Var h = relu(matmul(x, need(leaves, "embed.w")) + need(leaves, "embed.b"));
  for (int l = 0; l < cfg.attention_layers; ++l) {
    std::vector<Var> heads;
    for (int k = 0; k < cfg.heads; ++k) {
      heads.push_back(attention(matmul(h, need(leaves, head_key(l, "q", k))),
                                matmul(h, need(leaves, head_key(l, "k", k))),
                                matmul(h, need(leaves, head_key(l, "v", k))), mask));
    }
    h = relu(matmul(concat(heads), need(leaves, layer_key(l, "out.w"))) +
             need(leaves, layer_key(l, "out.b")));
  }
  Var hidden = relu(matmul(h, need(leaves, "q.hidden.w")) + need(leaves, "q.hidden.b"));
  return matmul(hidden, need(leaves, "q.out.w")) + need(leaves, "q.out.b");
}

std::vector<QVector> q_forward(const ParamMap& params, const CriticConfig& cfg,
                               const std::vector<IntersectionObservation>& observations,
                               const Adjacency& adjacency) {
  if (observations.size() != adjacency.size()) {
    throw Error("q_forward: expected " + std::to_string(adjacency.size()) +
                " observations, got " + std::to_string(observations.size()));
  }
  Tensor features(static_cast<Index>(observations.size()), kObservationFeatures);
  for (size_t i = 0; i < observations.size(); ++i) {
    features.row(static_cast<Index>(i)) = encode_obs(observations[i]);
  }
  const Tensor q = evaluate(params, features, attention_mask(adjacency), cfg);
  std::vector<QVector> out(observations.size());
  for (size_t i = 0; i < out.size(); ++i) {
    for (int a = 0; a < kNumPhases; ++a) out[i].values[a] = q(static_cast<Index>(i), a);
  }
  return out;
}

std::vector<IntersectionObservation> observe_all(const SimState& state) {
  std::vector<IntersectionObservation> out;
  for (IntersectionId id : state.network().controlled()) out.push_back(state.observe(id));
  return out;
}

Tensor encode_state(const SimState& state) {
  const auto& ids = state.network().controlled();
  Tensor f(static_cast<Index>(ids.size()), kObservationFeatures);
  for (size_t i = 0; i < ids.size(); ++i) {
    f.row(static_cast<Index>(i)) = encode_obs(state.observe(ids[i]));
  }
  return f;
}

double queue_reward(const SimState& state, IntersectionId id, const CriticConfig& cfg) {
  return -cfg.reward_scale * static_cast<double>(state.intersection_queue(id));
}

BellmanResult bellman_loss(const ParamMap& params, const ParamMap& target_params,
                           const std::vector<const Transition*>& batch, const Adjacency& adjacency,
                           const CriticConfig& cfg) {
  if (batch.empty()) throw Error("bellman_loss: empty batch");
  const auto copies = static_cast<int>(batch.size());
  const AttentionMask mask = attention_mask(adjacency, copies);
  const Index n = static_cast<Index>(adjacency.size());
  const Index rows = n * copies;

  const Tensor next_q = evaluate(target_params, stack(batch, true), mask, cfg);
  Tensor target(rows, 1);
  Tensor onehot = Tensor::Zero(rows, kNumPhases);
  for (int b = 0; b < copies; ++b) {
    const Transition& t = *batch[b];
    if (t.state.rows() != n || t.actions.size() != static_cast<size_t>(n) ||
        t.rewards.size() != static_cast<size_t>(n)) {
      throw Error("bellman_loss: transition does not match the adjacency size");
    }
    for (Index i = 0; i < n; ++i) {
      const Index r = b * n + i;
      target(r, 0) = t.rewards[i] + cfg.gamma * next_q.row(r).maxCoeff();
      onehot(r, index_of(t.actions[i])) = 1.0;
    }
  }

  Graph g;
  const auto leaves = make_leaves(g, params);
  Var q = critic_forward(g, leaves, stack(batch, false), mask, cfg);
  Var chosen = matmul(q * g.leaf(onehot), g.leaf(Tensor::Ones(kNumPhases, 1)));
  Var diff = g.leaf(target) - chosen;
  Var loss = mean(diff * diff);

  std::vector<NodeId> ids;
  for (const auto& [name, v] : leaves) ids.push_back(v.id);
  auto grads = g.gradient(loss.id, ids);

  BellmanResult result;
  result.loss = loss.scalar();
  for (const auto& [name, v] : leaves) result.gradients[name] = std::move(grads.at(v.id));
  return result;
}

double epsilon(const CriticConfig& cfg, int round) {
  if (round < 0) throw Error("epsilon: round must be non-negative");
  return std::max(cfg.epsilon_start * std::pow(cfg.epsilon_decay, round), cfg.epsilon_floor);
}

void ReplayBuffer::push(Transition t) {
  if (capacity_ == 0) return;
  if (items_.size() == capacity_) items_.pop_front();
  items_.push_back(std::move(t));
}

std::vector<const Transition*> ReplayBuffer::sample(std::size_t n, std::mt19937_64& rng) const {
  std::vector<std::size_t> idx(items_.size());
  std::iota(idx.begin(), idx.end(), 0);
  const std::size_t take = std::min(n, idx.size());
  // partial Fisher-Yates
  for (std::size_t i = 0; i < take; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  std::vector<const Transition*> out;
  out.reserve(take);
  for (std::size_t i = 0; i < take; ++i) out.push_back(&items_[idx[i]]);
  return out;
}

TrainResult train_critic(const EnvFactory& make_env, const CriticConfig& cfg, int rounds,
                         const std::function<void(const RoundLog&)>& on_round) {
  cfg.validate();
  TrainResult result;
  result.params = init_critic_params(cfg, cfg.seed);
  if (rounds <= 0) return result;

  ParamMap target = result.params;
  AdamOptimizer adam(cfg.learning_rate);
  ReplayBuffer buffer(static_cast<std::size_t>(cfg.buffer_capacity));
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> any_phase(0, kNumPhases - 1);
  const int decisions = cfg.episode.decisions();

  for (int round = 0; round < rounds; ++round) {
    RoundLog log;
    log.round = round;
    log.epsilon = epsilon(cfg, round);

    SimState env = make_env(round);
    const Adjacency adjacency = critic_adjacency(env.network());
    const auto& ids = env.network().controlled();
    env.advance_to_boundary();
    Tensor s = encode_state(env);
    for (int d = 0; d < decisions; ++d) {
      const std::vector<QVector> q = q_forward(result.params, cfg, observe_all(env), adjacency);
      Transition t;
      t.state = s;
      JointAction joint;
      for (size_t i = 0; i < ids.size(); ++i) {
        const Phase a = unit(rng) < log.epsilon ? phase_at(any_phase(rng)) : q[i].argmax();
        t.actions.push_back(a);
        joint[ids[i]] = a;
      }
      env.apply_actions(joint);
      env.advance_to_boundary();
      s = encode_state(env);
      for (IntersectionId id : ids) t.rewards.push_back(queue_reward(env, id, cfg));
      t.next_state = s;
      buffer.push(std::move(t));
    }
    log.train_metrics = env.metrics();
    log.buffer_size = buffer.size();

    if (buffer.size() < static_cast<std::size_t>(cfg.batch_size)) {
      log.skipped_update = true;
    } else {
      auto sample = buffer.sample(static_cast<std::size_t>(cfg.sample_size), rng);
      double loss_sum = 0.0;
      int steps = 0;
      for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(sample.begin(), sample.end(), rng);
        for (std::size_t start = 0; start + cfg.batch_size <= sample.size();
             start += static_cast<std::size_t>(cfg.batch_size)) {
          std::vector<const Transition*> batch(sample.begin() + static_cast<std::ptrdiff_t>(start),
                                               sample.begin() + static_cast<std::ptrdiff_t>(start) +
                                                   cfg.batch_size);
          BellmanResult r = bellman_loss(result.params, target, batch, adjacency, cfg);
          adam.step(result.params, r.gradients);
          loss_sum += r.loss;
          ++steps;
        }
      }
      log.mean_loss = steps > 0 ? loss_sum / steps : 0.0;
    }
    if ((round + 1) % cfg.target_update_interval == 0) target = result.params;

    SimState eval = make_env(round);
    log.greedy_metrics =
        run_episode(eval, critic_greedy_controller(FrozenCritic(result.params, cfg)), cfg.episode);

    if (on_round) on_round(log);
    result.log.push_back(log);
  }
  return result;
}

std::vector<QVector> FrozenCritic::q_forward(const SimState& state) const {
  return q_forward(observe_all(state), critic_adjacency(state.network()));
}

void save_critic(const std::filesystem::path& path, const ParamMap& params,
                 const CriticConfig& cfg) {
  Checkpoint ckpt;
  ckpt.params = params;
  ckpt.metadata = {{"kind", "critic"}, {"critic_config", critic_config_to_json(cfg)}};
  save_checkpoint(path, ckpt);
}

FrozenCritic load_critic(const std::filesystem::path& path) {
  Checkpoint ckpt = load_checkpoint(path);
  if (!ckpt.metadata.contains("critic_config")) {
    throw SchemaError("critic checkpoint " + path.string() + " lacks a critic_config block");
  }
  return FrozenCritic(std::move(ckpt.params), critic_config_from_json(ckpt.metadata["critic_config"]));
}

Controller critic_greedy_controller(FrozenCritic critic) {
  return [critic = std::move(critic)](const SimState& s, std::int64_t) {
    const auto q = critic.q_forward(s);
    JointAction joint;
    const auto& ids = s.network().controlled();
    for (size_t i = 0; i < ids.size(); ++i) joint[ids[i]] = q[i].argmax();
    return joint;
  };
}

}  // namespace dglight
