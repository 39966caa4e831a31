#pragma once

// Graph-attention DQN critic.
//
// Each intersection's 36-dim observation is embedded, refined by multi-head
// scaled-dot-product attention over itself and its real neighbours, and
// mapped to one Q-value per phase. Training is standard DQN: epsilon-greedy
// episodes, FIFO replay, Bellman regression against a periodically copied
// target network.

#include "dglight/autodiff.hpp"
#include "dglight/checkpoint.hpp"
#include "dglight/episode.hpp"
#include "dglight/phase.hpp"
#include "dglight/simulator.hpp"
#include "dglight/tensor.hpp"

#include <array>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <memory>
#include <random>
#include <vector>

namespace dglight {

inline constexpr int kObservationFeatures = 36;

struct QVector {
  std::array<double, kNumPhases> values{};

  double operator[](Phase p) const { return values[index_of(p)]; }
  double& operator[](Phase p) { return values[index_of(p)]; }
  // Ties go to the lowest canonical index.
  Phase argmax() const;
  bool operator==(const QVector&) const = default;
};

struct CriticConfig {
  int embed_dim = 32;
  int heads = 4;
  int head_dim = 8;
  int attention_layers = 1;
  int hidden_dim = 32;
  double feature_scale = 0.1;

  double gamma = 0.8;
  int buffer_capacity = 12000;
  int sample_size = 3000;
  int batch_size = 20;
  int epochs = 100;
  int target_update_interval = 5;
  double learning_rate = 1e-3;
  double epsilon_start = 0.8;
  double epsilon_decay = 0.95;
  double epsilon_floor = 0.2;
  double reward_scale = 0.25;  // reward = -reward_scale * queue length

  EpisodeSpec episode;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json critic_config_to_json(const CriticConfig& cfg);
CriticConfig critic_config_from_json(const nlohmann::json& doc);

// 8 controlled lanes x [queued, seg1, seg2, seg3], then the current phase
// one-hot. Lanes in controlled-lane order.
Eigen::RowVectorXd encode_obs(const IntersectionObservation& obs);

// Neighbour lists in local index space (position within controlled()).
using Adjacency = std::vector<std::vector<int>>;
Adjacency critic_adjacency(const RoadNetwork& net);
// Visible keys for every query: itself plus its neighbours, repeated
// block-diagonally for `copies` stacked states.
AttentionMask attention_mask(const Adjacency& adjacency, int copies = 1);

ParamMap init_critic_params(const CriticConfig& cfg, std::uint64_t seed);

// Symbolic forward pass over stacked intersection features ([rows x 36]).
// `leaves` must hold a graph leaf for every parameter name.
Var critic_forward(Graph& g, const std::map<std::string, Var>& leaves, const Tensor& features,
                   const AttentionMask& mask, const CriticConfig& cfg);

// Q-values for one network state; `observations` in controlled() order.
std::vector<QVector> q_forward(const ParamMap& params, const CriticConfig& cfg,
                               const std::vector<IntersectionObservation>& observations,
                               const Adjacency& adjacency);

// Encoded features of all controlled intersections, one row each.
Tensor encode_state(const SimState& state);
std::vector<IntersectionObservation> observe_all(const SimState& state);

// Reward observed at a decision boundary.
double queue_reward(const SimState& state, IntersectionId id, const CriticConfig& cfg);

struct Transition {
  Tensor state;       // [n x 36]
  std::vector<Phase> actions;
  std::vector<double> rewards;
  Tensor next_state;  // [n x 36]
};

struct BellmanResult {
  double loss = 0.0;
  ParamMap gradients;
};

// mean over batch and intersections of (r + gamma max_a' Q_target(s', a') -
// Q(s, a))^2; the target term is a constant.
BellmanResult bellman_loss(const ParamMap& params, const ParamMap& target_params,
                           const std::vector<const Transition*>& batch, const Adjacency& adjacency,
                           const CriticConfig& cfg);

double epsilon(const CriticConfig& cfg, int round);
inline double epsilon(int round) { return epsilon(CriticConfig{}, round); }

// Capacity-bounded FIFO replay memory.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {}
  void push(Transition t);
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  // Uniform sample without replacement of min(n, size()) items.
  std::vector<const Transition*> sample(std::size_t n, std::mt19937_64& rng) const;
  const std::deque<Transition>& items() const { return items_; }

 private:
  std::size_t capacity_;
  std::deque<Transition> items_;
};

struct RoundLog {
  int round = 0;
  double epsilon = 0.0;
  double mean_loss = 0.0;
  bool skipped_update = false;
  std::size_t buffer_size = 0;
  MetricsReport train_metrics;
  MetricsReport greedy_metrics;
};

struct TrainResult {
  ParamMap params;
  std::vector<RoundLog> log;
};

using EnvFactory = std::function<SimState(int round)>;

TrainResult train_critic(const EnvFactory& make_env, const CriticConfig& cfg, int rounds,
                         const std::function<void(const RoundLog&)>& on_round = {});

// Read-only critic. Parameters are immutable once frozen; there is no way
// to update them through this handle.
class FrozenCritic {
 public:
  FrozenCritic(ParamMap params, CriticConfig cfg)
      : params_(std::make_shared<const ParamMap>(std::move(params))), cfg_(std::move(cfg)) {}

  std::vector<QVector> q_forward(const std::vector<IntersectionObservation>& observations,
                                 const Adjacency& adjacency) const {
    return dglight::q_forward(*params_, cfg_, observations, adjacency);
  }
  std::vector<QVector> q_forward(const SimState& state) const;

  const ParamMap& params() const { return *params_; }
  const CriticConfig& config() const { return cfg_; }

 private:
  std::shared_ptr<const ParamMap> params_;
  CriticConfig cfg_;
};

inline FrozenCritic freeze(ParamMap params, CriticConfig cfg) {
  return FrozenCritic(std::move(params), std::move(cfg));
}

void save_critic(const std::filesystem::path& path, const ParamMap& params, const CriticConfig& cfg);
FrozenCritic load_critic(const std::filesystem::path& path);

// Greedy controller over a frozen critic.
Controller critic_greedy_controller(FrozenCritic critic);

}  // namespace dglight
