#include "dglight/policy.hpp"

#include "dglight/checkpoint.hpp"
#include "dglight/error.hpp"

#include <httplib.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <random>
#include <thread>

namespace dglight {

using nlohmann::json;

void SamplingParams::validate() const {
  if (!(temperature > 0.0)) throw Error("sampling: temperature must be > 0");
  if (!(top_p > 0.0 && top_p <= 1.0)) throw Error("sampling: top_p must be in (0, 1]");
  if (top_k < 1) throw Error("sampling: top_k must be >= 1");
  if (n < 1) throw Error("sampling: n must be >= 1");
  if (max_tokens < 1) throw Error("sampling: max_tokens must be >= 1");
}

json sampling_to_json(const SamplingParams& s) {
  return {{"temperature", s.temperature}, {"top_p", s.top_p}, {"top_k", s.top_k},
          {"max_tokens", s.max_tokens}, {"n", s.n}};
}

SamplingParams sampling_from_json(const json& j) {
  SamplingParams s;
  s.temperature = j.value("temperature", s.temperature);
  s.top_p = j.value("top_p", s.top_p);
  s.top_k = j.value("top_k", s.top_k);
  s.max_tokens = j.value("max_tokens", s.max_tokens);
  s.n = j.value("n", s.n);
  s.validate();
  return s;
}

const TemplateBank& default_templates() {
  static const TemplateBank bank = [] {
    TemplateBank b;
    const std::array<std::string, kNumPhases> lanes = {
        "eastern and western through lanes", "northern and southern through lanes",
        "eastern and western left-turn lanes", "northern and southern left-turn lanes"};
    for (Phase p : kAllPhases) {
      const std::string tag = "<signal>" + std::string(phase_name(p)) + "</signal>";
      const std::string& l = lanes[index_of(p)];
      b[index_of(p)] = {
          "Step 1: The " + l + " hold the most pressing early queues.\nStep 2: " + tag,
          "Queued vehicles on the " + l +
              " dominate the approaching load, so relieving them next helps most.\n" + tag,
      };
    }
    return b;
  }();
  return bank;
}

void MockPolicyParams::set_params(const ParamMap& p) {
  weight = p.at("policy.w");
  bias = p.at("policy.b");
  validate();
}

void MockPolicyParams::validate() const {
  if (weight.rows() != kPromptFeatures || weight.cols() != kNumPhases || bias.rows() != 1 ||
      bias.cols() != kNumPhases) {
    throw Error("mock policy: expected a 36x4 weight and 1x4 bias");
  }
  if (!all_finite(weight) || !all_finite(bias)) throw Error("mock policy: non-finite parameters");
  for (Phase p : kAllPhases) {
    const auto& list = templates[index_of(p)];
    if (list.size() < 2) throw Error("mock policy: need at least two templates per phase");
    for (const auto& t : list) {
      if (parse_response(t) != ParseResult::ok(p)) {
        throw Error("mock policy: template does not carry exactly one " +
                    std::string(phase_name(p)) + " tag");
      }
    }
  }
}

Tensor mock_inputs(const Tensor& features, double feature_scale) {
  if (features.cols() != kPromptFeatures) throw Error("mock policy: expected 36 features");
  Tensor out(features.rows(), features.cols());
  for (Index r = 0; r < features.rows(); ++r) {
    const double total = features.row(r).head(32).sum();
    out.row(r) = features.row(r) * (feature_scale / (1.0 + total));
  }
  return out;
}

Eigen::RowVectorXd mock_logits(const MockPolicyParams& params, const Eigen::RowVectorXd& features) {
  if (features.size() != kPromptFeatures) throw Error("mock policy: expected 36 features");
  const Tensor x = mock_inputs(features, params.feature_scale);
  return x.row(0) * params.weight + params.bias;
}

namespace {

Eigen::RowVectorXd stable_softmax(const Eigen::RowVectorXd& z) {
  Eigen::RowVectorXd e = (z.array() - z.maxCoeff()).exp();
  return e / e.sum();
}

}  // namespace

Eigen::RowVectorXd mock_probs(const MockPolicyParams& params, const Eigen::RowVectorXd& features) {
  return stable_softmax(mock_logits(params, features));
}

std::vector<ResponseSample> mock_generate(const MockPolicyParams& params,
                                          const Eigen::RowVectorXd& features, int k,
                                          const SamplingParams& sampling, std::uint64_t seed) {
  if (k < 1) throw Error("mock_generate: k must be >= 1");
  sampling.validate();
  const Eigen::RowVectorXd logits = mock_logits(params, features);
  Eigen::RowVectorXd probs = stable_softmax(logits / sampling.temperature);

  // top-k then top-p over the phase distribution; ties keep the lower index
  std::array<int, kNumPhases> order;
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return probs(a) > probs(b); });
  Eigen::RowVectorXd kept = Eigen::RowVectorXd::Zero(kNumPhases);
  double mass = 0.0;
  for (int r = 0; r < kNumPhases && r < sampling.top_k; ++r) {
    kept(order[r]) = probs(order[r]);
    mass += probs(order[r]);
    if (mass >= sampling.top_p) break;
  }
  kept /= kept.sum();

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<ResponseSample> out;
  for (int j = 0; j < k; ++j) {
    const double u = unit(rng);
    int phase = kNumPhases - 1;
    double acc = 0.0;
    for (int a = 0; a < kNumPhases; ++a) {
      acc += kept(a);
      if (u < acc && kept(a) > 0.0) {
        phase = a;
        break;
      }
    }
    while (kept(phase) == 0.0) --phase;  // rounding at the top end
    const auto& list = params.templates[phase];
    const auto t = std::min(static_cast<size_t>(unit(rng) * static_cast<double>(list.size())),
                            list.size() - 1);
    ResponseSample s;
    s.text = list[t];
    s.phase = phase_at(phase);
    s.logprob = mock_logprob(params, features, s);
    out.push_back(std::move(s));
  }
  return out;
}

std::pair<Phase, int> find_template(const TemplateBank& bank, const std::string& text) {
  for (Phase p : kAllPhases) {
    const auto& list = bank[index_of(p)];
    auto it = std::find(list.begin(), list.end(), text);
    if (it != list.end()) return {p, static_cast<int>(it - list.begin())};
  }
  throw Error("mock policy: response text is not one of the policy's templates");
}

double mock_logprob(const MockPolicyParams& params, const Eigen::RowVectorXd& features,
                    const ResponseSample& response) {
  const auto [phase, idx] = find_template(params.templates, response.text);
  (void)idx;
  const Eigen::RowVectorXd z = mock_logits(params, features);
  const double m = z.maxCoeff();
  const double lse = m + std::log((z.array() - m).exp().sum());
  return z(index_of(phase)) - lse -
         std::log(static_cast<double>(params.templates[index_of(phase)].size()));
}

Var mock_phase_prob(Graph& g, Var weight, Var bias, const Tensor& features,
                    const std::vector<Phase>& phases, double feature_scale) {
  if (features.cols() != kPromptFeatures || static_cast<size_t>(features.rows()) != phases.size()) {
    throw Error("mock_phase_prob: features and phases disagree");
  }
  Tensor onehot = Tensor::Zero(features.rows(), kNumPhases);
  for (size_t r = 0; r < phases.size(); ++r) onehot(static_cast<Index>(r), index_of(phases[r])) = 1;
  Var probs = softmax(matmul(g.leaf(mock_inputs(features, feature_scale)), weight) + bias);
  return matmul(probs * g.leaf(onehot), g.leaf(Tensor::Ones(kNumPhases, 1)));
}

void save_mock_policy(const std::filesystem::path& path, const MockPolicyParams& params) {
  Checkpoint ckpt;
  ckpt.params = params.as_params();
  json bank = json::array();
  for (const auto& list : params.templates) bank.push_back(list);
  ckpt.metadata = {{"kind", "mock_policy"},
                   {"feature_scale", params.feature_scale},
                   {"templates", bank}};
  save_checkpoint(path, ckpt);
}

MockPolicyParams load_mock_policy(const std::filesystem::path& path) {
  const Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.metadata.value("kind", "") != "mock_policy") {
    throw SchemaError(path.string() + " is not a mock policy checkpoint");
  }
  MockPolicyParams p;
  p.feature_scale = ckpt.metadata.at("feature_scale").get<double>();
  const auto& bank = ckpt.metadata.at("templates");
  if (!bank.is_array() || bank.size() != kNumPhases) {
    throw SchemaError(path.string() + ": template bank must list four phases");
  }
  for (int i = 0; i < kNumPhases; ++i) p.templates[i] = bank[i].get<std::vector<std::string>>();
  p.set_params(ckpt.params);
  return p;
}

namespace {

struct ParsedUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

ParsedUrl split_url(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) throw Error("llm endpoint: malformed URL '" + url + "'");
  const auto slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return {url, "/v1/completions"};
  std::string path = url.substr(slash);
  if (path == "/") path = "/v1/completions";
  return {url.substr(0, slash), path};
}

std::string excerpt(const std::string& body) {
  return body.size() <= 200 ? body : body.substr(0, 200) + "...";
}

}  // namespace

std::vector<ResponseSample> llm_generate(const LlmEndpoint& endpoint, const std::string& prompt,
                                         int k, const SamplingParams& sampling) {
  if (k < 1) throw Error("llm_generate: k must be >= 1");
  sampling.validate();
  std::string base = endpoint.base_url;
  if (base.empty()) {
    const char* env = std::getenv("DGLIGHT_LLM_URL");
    if (!env || !*env) throw Error("llm endpoint: no URL configured and DGLIGHT_LLM_URL unset");
    base = env;
  }
  const ParsedUrl url = split_url(base);
  const json body = {{"model", endpoint.model},         {"prompt", prompt},
                     {"n", k},                          {"temperature", sampling.temperature},
                     {"top_p", sampling.top_p},         {"top_k", sampling.top_k},
                     {"max_tokens", sampling.max_tokens}};
  const std::string payload = body.dump();

  std::string last_error;
  int backoff = endpoint.backoff_ms;
  for (int attempt = 0; attempt < std::max(1, endpoint.attempts); ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(std::chrono::milliseconds(backoff));
      backoff *= 2;
    }
    httplib::Client client(url.origin);
    const auto timeout = std::chrono::duration<double>(endpoint.timeout_s);
    client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    auto res = client.Post(url.path, payload, "application/json");
    if (!res) {
      last_error = "request to " + base + " failed: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status < 200 || res->status >= 300) {
      throw TransportError("llm endpoint returned HTTP " + std::to_string(res->status) + ": " +
                           excerpt(res->body));
    }
    try {
      const json doc = json::parse(res->body);
      const auto& choices = doc.at("choices");
      if (!choices.is_array() || choices.size() != static_cast<size_t>(k)) {
        throw Error("expected " + std::to_string(k) + " choices");
      }
      std::vector<ResponseSample> out;
      for (const auto& c : choices) out.push_back({c.at("text").get<std::string>(), {}, {}});
      return out;
    } catch (const std::exception& e) {
      last_error = std::string("malformed response body (") + e.what() + "): " + excerpt(res->body);
    }
  }
  throw TransportError("llm endpoint: " + last_error + " after " +
                       std::to_string(std::max(1, endpoint.attempts)) + " attempts");
}

std::vector<ResponseSample> MockPolicy::generate(const PromptText&,
                                                 const IntersectionObservation& obs, int k,
                                                 std::uint64_t seed) const {
  return mock_generate(params_, prompt_features(obs), k, sampling_, seed);
}

std::vector<ResponseSample> LlmPolicy::generate(const PromptText& prompt,
                                                const IntersectionObservation&, int k,
                                                std::uint64_t) const {
  return llm_generate(endpoint_, prompt.text, k, sampling_);
}

}  // namespace dglight
