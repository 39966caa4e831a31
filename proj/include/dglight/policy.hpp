#pragma once

// Response-generating policies: a differentiable template policy for desk
// experiments and an HTTP client for an external completion endpoint.

#include "dglight/autodiff.hpp"
#include "dglight/prompting.hpp"
#include "dglight/tensor.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace dglight {

struct ResponseSample {
  std::string text;
  std::optional<Phase> phase;     // mock only
  std::optional<double> logprob;  // mock only

  bool operator==(const ResponseSample&) const = default;
};

struct SamplingParams {
  double temperature = 1.0;
  double top_p = 1.0;
  int top_k = 50;
  int max_tokens = 1024;
  int n = 4;

  void validate() const;
};

nlohmann::json sampling_to_json(const SamplingParams& s);
SamplingParams sampling_from_json(const nlohmann::json& j);

using TemplateBank = std::array<std::vector<std::string>, kNumPhases>;
const TemplateBank& default_templates();

// Linear softmax policy over phases on count shares:
// logits = feature_scale * x / (1 + lane total) W + b.
struct MockPolicyParams {
  Tensor weight = Tensor::Zero(kPromptFeatures, kNumPhases);
  Tensor bias = Tensor::Zero(1, kNumPhases);
  double feature_scale = 1.0;
  TemplateBank templates = default_templates();

  ParamMap as_params() const { return {{"policy.b", bias}, {"policy.w", weight}}; }
  void set_params(const ParamMap& p);
  void validate() const;
  bool operator==(const MockPolicyParams&) const = default;
};

// Rows of prompt features mapped to policy inputs.
Tensor mock_inputs(const Tensor& features, double feature_scale);
Eigen::RowVectorXd mock_logits(const MockPolicyParams& params, const Eigen::RowVectorXd& features);
// Phase probabilities at temperature 1, no truncation.
Eigen::RowVectorXd mock_probs(const MockPolicyParams& params, const Eigen::RowVectorXd& features);

std::vector<ResponseSample> mock_generate(const MockPolicyParams& params,
                                          const Eigen::RowVectorXd& features, int k,
                                          const SamplingParams& sampling, std::uint64_t seed);

// Index of `text` in the template bank; throws Error if unrecognised.
std::pair<Phase, int> find_template(const TemplateBank& bank, const std::string& text);

// log pi(phase | x) + log(1 / |templates of phase|).
double mock_logprob(const MockPolicyParams& params, const Eigen::RowVectorXd& features,
                    const ResponseSample& response);

// Symbolic probability of `phase` (without the template factor) for
// stacked feature rows; returns [rows x 1].
Var mock_phase_prob(Graph& g, Var weight, Var bias, const Tensor& features,
                    const std::vector<Phase>& phases, double feature_scale);

void save_mock_policy(const std::filesystem::path& path, const MockPolicyParams& params);
MockPolicyParams load_mock_policy(const std::filesystem::path& path);

struct LlmEndpoint {
  std::string base_url;  // http://host:port[/path]; empty -> DGLIGHT_LLM_URL
  std::string model = "dglight";
  double timeout_s = 60.0;
  int attempts = 3;
  int backoff_ms = 200;  // doubled after each failed attempt
};

// One completion request with n = k; returns the texts in order.
std::vector<ResponseSample> llm_generate(const LlmEndpoint& endpoint, const std::string& prompt,
                                         int k, const SamplingParams& sampling);

// What rollouts need from a policy.
class Policy {
 public:
  virtual ~Policy() = default;
  virtual std::vector<ResponseSample> generate(const PromptText& prompt,
                                               const IntersectionObservation& obs, int k,
                                               std::uint64_t seed) const = 0;
};

class MockPolicy : public Policy {
 public:
  explicit MockPolicy(MockPolicyParams params, SamplingParams sampling = {})
      : params_(std::move(params)), sampling_(sampling) {}
  std::vector<ResponseSample> generate(const PromptText& prompt, const IntersectionObservation& obs,
                                       int k, std::uint64_t seed) const override;
  const MockPolicyParams& params() const { return params_; }

 private:
  MockPolicyParams params_;
  SamplingParams sampling_;
};

class LlmPolicy : public Policy {
 public:
  explicit LlmPolicy(LlmEndpoint endpoint, SamplingParams sampling = {})
      : endpoint_(std::move(endpoint)), sampling_(sampling) {}
  std::vector<ResponseSample> generate(const PromptText& prompt, const IntersectionObservation& obs,
                                       int k, std::uint64_t seed) const override;

 private:
  LlmEndpoint endpoint_;
  SamplingParams sampling_;
};

}  // namespace dglight
