#pragma once

// Collect-then-train GRPO on stored critic score vectors.

#include "dglight/adam.hpp"
#include "dglight/policy.hpp"
#include "dglight/rollout.hpp"

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace dglight {

struct GRPOConfig {
  int group_size = 4;
  int prompts_per_step = 8;
  int epochs = 1;
  double learning_rate = 1e-2;
  double clip_eps = 0.2;
  double kl_coeff = 0.0;
  double std_eps = 1e-4;
  double r_invalid = 0.0;
  SamplingParams sampling;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json grpo_config_to_json(const GRPOConfig& c);
GRPOConfig grpo_config_from_json(const nlohmann::json& j);

// One stored prompt with its full score vector.
struct DatasetEntry {
  std::string prompt;
  QVector q_values;
  double r_invalid = 0.0;
  int step = 0;
  std::string intersection;

  bool operator==(const DatasetEntry&) const = default;
};

DatasetEntry to_entry(const RolloutRecord& r, double r_invalid);
std::vector<DatasetEntry> to_entries(const std::vector<RolloutRecord>& records, double r_invalid);

double reward_lookup(const QVector& q, const std::string& completion, double r_invalid);
inline double reward_lookup(const DatasetEntry& e, const std::string& completion) {
  return reward_lookup(e.q_values, completion, e.r_invalid);
}
inline double reward_lookup(const RolloutRecord& r, const std::string& completion,
                            double r_invalid = 0.0) {
  return reward_lookup(r.q_values, completion, r_invalid);
}

// (r - mean) / (population std + stabilizer); zeros when all rewards match.
std::vector<double> group_advantages(const std::vector<double>& rewards, double stabilizer = 1e-4);

struct Group {
  std::string prompt;
  Eigen::RowVectorXd features;
  std::vector<ResponseSample> completions;
  std::vector<double> rewards;
  std::vector<double> advantages;
  std::vector<double> old_logprobs;
};

// Samples group_size completions from `params` and scores them.
Group make_group(const DatasetEntry& entry, const MockPolicyParams& params, const GRPOConfig& cfg,
                 std::uint64_t seed);

struct GrpoDiagnostics {
  double surrogate = 0.0;  // clipped surrogate minus KL penalty
  double mean_ratio = 1.0;
  double clipped_fraction = 0.0;
  double kl = 0.0;
};

struct GrpoObjective {
  GrpoDiagnostics diagnostics;
  ParamMap gradients;  // of the negated objective (what the optimiser descends)
};

GrpoObjective grpo_objective(const MockPolicyParams& params, const std::vector<Group>& groups,
                             const MockPolicyParams& old_params, const GRPOConfig& cfg);

// One Adam step on the clipped surrogate.
GrpoDiagnostics grpo_step(MockPolicyParams& params, const std::vector<Group>& groups,
                          const MockPolicyParams& old_params, const GRPOConfig& cfg,
                          AdamOptimizer& optimizer);

struct GrpoStepLog {
  int epoch = 0;
  int step = 0;
  double mean_reward = 0.0;
  GrpoDiagnostics diagnostics;
};

// Epochs over the dataset in shuffled batches of prompts; groups are
// resampled from the current policy for every batch.
MockPolicyParams grpo_train(MockPolicyParams params, const std::vector<DatasetEntry>& dataset,
                            const GRPOConfig& cfg,
                            const std::function<void(const GrpoStepLog&)>& on_step = {});

std::size_t export_dataset(const std::vector<DatasetEntry>& entries, const std::filesystem::path& path);
std::vector<DatasetEntry> load_dataset(const std::filesystem::path& path);

}  // namespace dglight
