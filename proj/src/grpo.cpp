#include "dglight/grpo.hpp"

#include "dglight/error.hpp"
#include "dglight/seed.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

namespace dglight {

using nlohmann::json;

void GRPOConfig::validate() const {
  if (group_size < 1) throw Error("grpo: group size must be >= 1");
  if (prompts_per_step < 1 || epochs < 0) throw Error("grpo: bad batch settings");
  if (!(learning_rate > 0.0)) throw Error("grpo: learning rate must be > 0");
  if (!(clip_eps > 0.0)) throw Error("grpo: clip epsilon must be > 0");
  if (kl_coeff < 0.0 || std_eps < 0.0) throw Error("grpo: kl coefficient and stabilizer must be >= 0");
  sampling.validate();
}

json grpo_config_to_json(const GRPOConfig& c) {
  return {{"group_size", c.group_size}, {"prompts_per_step", c.prompts_per_step},
          {"epochs", c.epochs},         {"learning_rate", c.learning_rate},
          {"clip_eps", c.clip_eps},     {"kl_coeff", c.kl_coeff},
          {"std_eps", c.std_eps},       {"r_invalid", c.r_invalid},
          {"sampling", sampling_to_json(c.sampling)}, {"seed", c.seed}};
}

GRPOConfig grpo_config_from_json(const json& j) {
  GRPOConfig c;
  c.group_size = j.value("group_size", c.group_size);
  c.prompts_per_step = j.value("prompts_per_step", c.prompts_per_step);
  c.epochs = j.value("epochs", c.epochs);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.clip_eps = j.value("clip_eps", c.clip_eps);
  c.kl_coeff = j.value("kl_coeff", c.kl_coeff);
  c.std_eps = j.value("std_eps", c.std_eps);
  c.r_invalid = j.value("r_invalid", c.r_invalid);
  if (j.contains("sampling")) c.sampling = sampling_from_json(j["sampling"]);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

DatasetEntry to_entry(const RolloutRecord& r, double r_invalid) {
  return {r.prompt, r.q_values, r_invalid, r.step, r.intersection};
}

std::vector<DatasetEntry> to_entries(const std::vector<RolloutRecord>& records, double r_invalid) {
  std::vector<DatasetEntry> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(to_entry(r, r_invalid));
  return out;
}

double reward_lookup(const QVector& q, const std::string& completion, double r_invalid) {
  const ParseResult p = parse_response(completion);
  return p.valid() ? q[*p.phase] : r_invalid;
}

std::vector<double> group_advantages(const std::vector<double>& rewards, double stabilizer) {
  if (rewards.empty()) throw Error("group_advantages: empty group");
  const double n = static_cast<double>(rewards.size());
  const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double sd = std::sqrt(var / n);
  std::vector<double> out(rewards.size(), 0.0);
  if (sd == 0.0) return out;
  for (size_t j = 0; j < rewards.size(); ++j) out[j] = (rewards[j] - mean) / (sd + stabilizer);
  return out;
}

Group make_group(const DatasetEntry& entry, const MockPolicyParams& params, const GRPOConfig& cfg,
                 std::uint64_t seed) {
  Group g;
  g.prompt = entry.prompt;
  g.features = prompt_features(entry.prompt);
  g.completions = mock_generate(params, g.features, cfg.group_size, cfg.sampling, seed);
  for (const auto& c : g.completions) {
    g.rewards.push_back(reward_lookup(entry, c.text));
    g.old_logprobs.push_back(*c.logprob);
  }
  g.advantages = group_advantages(g.rewards, cfg.std_eps);
  return g;
}

GrpoObjective grpo_objective(const MockPolicyParams& params, const std::vector<Group>& groups,
                             const MockPolicyParams& old_params, const GRPOConfig& cfg) {
  std::vector<Phase> phases;
  std::vector<double> adv;
  std::vector<Index> feature_row;
  Tensor features(static_cast<Index>(groups.size()), kPromptFeatures);
  for (size_t gi = 0; gi < groups.size(); ++gi) {
    const Group& g = groups[gi];
    if (g.completions.size() != g.advantages.size()) throw Error("grpo: group sizes disagree");
    features.row(static_cast<Index>(gi)) = g.features;
    for (size_t j = 0; j < g.completions.size(); ++j) {
      phases.push_back(find_template(params.templates, g.completions[j].text).first);
      adv.push_back(g.advantages[j]);
      feature_row.push_back(static_cast<Index>(gi));
    }
  }
  if (phases.empty()) throw Error("grpo: no completions");
  const auto n = static_cast<Index>(phases.size());
  Tensor x(n, kPromptFeatures);
  Tensor a(n, 1);
  Tensor inv_old(n, 1);
  for (Index r = 0; r < n; ++r) {
    x.row(r) = features.row(feature_row[r]);
    a(r, 0) = adv[r];
    inv_old(r, 0) = 1.0 / mock_probs(old_params, x.row(r))(index_of(phases[r]));
  }

  Graph g;
  Var w = g.leaf(params.weight);
  Var b = g.leaf(params.bias);
  // template factors cancel in the ratio
  Var ratio = mock_phase_prob(g, w, b, x, phases, params.feature_scale) * g.leaf(inv_old);
  Var adv_leaf = g.leaf(a);
  Var clipped = clamp(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
  Var surrogate = mean(minimum(ratio * adv_leaf, clipped * adv_leaf));
  Var objective = surrogate;
  double kl = 0.0;
  if (cfg.kl_coeff > 0.0) {
    Tensor ref(features.rows(), kNumPhases);
    for (Index r = 0; r < features.rows(); ++r) ref.row(r) = mock_probs(old_params, features.row(r));
    Var p = softmax(matmul(g.leaf(mock_inputs(features, params.feature_scale)), w) + b);
    Var kl_var = (1.0 / static_cast<double>(features.rows())) *
                 sum(p * (log(p) - g.leaf(ref.array().log().matrix())));
    kl = kl_var.scalar();
    objective = surrogate - cfg.kl_coeff * kl_var;
  }
  Var loss = -objective;
  auto grads = g.gradient(loss, {w, b});

  GrpoObjective out;
  out.diagnostics.surrogate = objective.scalar();
  out.diagnostics.mean_ratio = ratio.value().mean();
  const auto& rv = ratio.value().array();
  out.diagnostics.clipped_fraction =
      ((rv < 1.0 - cfg.clip_eps) || (rv > 1.0 + cfg.clip_eps)).cast<double>().mean();
  out.diagnostics.kl = kl;
  out.gradients["policy.w"] = std::move(grads.at(w.id));
  out.gradients["policy.b"] = std::move(grads.at(b.id));
  return out;
}

GrpoDiagnostics grpo_step(MockPolicyParams& params, const std::vector<Group>& groups,
                          const MockPolicyParams& old_params, const GRPOConfig& cfg,
                          AdamOptimizer& optimizer) {
  GrpoObjective obj = grpo_objective(params, groups, old_params, cfg);
  ParamMap p = params.as_params();
  optimizer.step(p, obj.gradients);
  params.set_params(p);
  return obj.diagnostics;
}

MockPolicyParams grpo_train(MockPolicyParams params, const std::vector<DatasetEntry>& dataset,
                            const GRPOConfig& cfg,
                            const std::function<void(const GrpoStepLog&)>& on_step) {
  cfg.validate();
  params.validate();
  AdamOptimizer optimizer(cfg.learning_rate);
  std::vector<size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(derive_seed(cfg.seed, {0x67727030}));
  int step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.prompts_per_step)) {
      const size_t stop = std::min(order.size(), start + static_cast<size_t>(cfg.prompts_per_step));
      const MockPolicyParams old = params;
      std::vector<Group> groups;
      double reward_sum = 0.0;
      size_t reward_count = 0;
      for (size_t i = start; i < stop; ++i) {
        groups.push_back(make_group(dataset[order[i]], old, cfg,
                                    derive_seed(cfg.seed, {static_cast<std::uint64_t>(epoch),
                                                           static_cast<std::uint64_t>(order[i])})));
        for (double r : groups.back().rewards) reward_sum += r;
        reward_count += groups.back().rewards.size();
      }
      GrpoStepLog log;
      log.epoch = epoch;
      log.step = step++;
      log.mean_reward = reward_count ? reward_sum / static_cast<double>(reward_count) : 0.0;
      log.diagnostics = grpo_step(params, groups, old, cfg, optimizer);
      if (on_step) on_step(log);
    }
  }
  return params;
}

namespace {
constexpr const char* kDatasetSchema = "dglight.grpo_dataset";
}

std::size_t export_dataset(const std::vector<DatasetEntry>& entries, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << json{{"schema", kDatasetSchema}, {"version", "1"}}.dump() << '\n';
  for (const auto& e : entries) {
    out << json{{"prompt", e.prompt},
                {"q_values", e.q_values.values},
                {"r_invalid", e.r_invalid},
                {"provenance", {{"step", e.step}, {"intersection", e.intersection}}}}
               .dump()
        << '\n';
  }
  if (!out) throw Error("write failed for " + path.string());
  return entries.size();
}

std::vector<DatasetEntry> load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::vector<DatasetEntry> out;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    try {
      const json j = json::parse(line);
      if (number == 1) {
        if (j.value("schema", "") != kDatasetSchema || j.value("version", "") != "1") {
          throw SchemaError("expected a dglight.grpo_dataset version 1 header");
        }
        continue;
      }
      DatasetEntry e;
      e.prompt = j.at("prompt").get<std::string>();
      const auto q = j.at("q_values").get<std::vector<double>>();
      if (q.size() != kNumPhases) throw SchemaError("q_values must hold four numbers");
      std::copy(q.begin(), q.end(), e.q_values.values.begin());
      e.r_invalid = j.at("r_invalid").get<double>();
      e.step = j.at("provenance").at("step").get<int>();
      e.intersection = j.at("provenance").at("intersection").get<std::string>();
      out.push_back(std::move(e));
    } catch (const std::exception& e) {
      throw SchemaError(path.string() + ": line " + std::to_string(number) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace dglight
