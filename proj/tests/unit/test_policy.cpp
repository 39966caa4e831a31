#include "doctest.h"
#include "helpers.hpp"
#include "stub_server.hpp"

#include "dglight/error.hpp"
#include "dglight/policy.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cmath>

using namespace dglight;

namespace {

Eigen::RowVectorXd sample_features() { return prompt_features(testing::sample_observation()); }

MockPolicyParams with_bias(double a, double b, double c, double d) {
  MockPolicyParams p;
  p.bias << a, b, c, d;
  return p;
}

std::array<int, 4> phase_counts(const std::vector<ResponseSample>& samples) {
  std::array<int, 4> c{};
  for (const auto& s : samples) c[index_of(*s.phase)] += 1;
  return c;
}

LlmEndpoint fast_endpoint(const std::string& url) {
  LlmEndpoint e;
  e.base_url = url;
  e.timeout_s = 5.0;
  e.backoff_ms = 1;
  return e;
}

}  // namespace

TEST_SUITE("policy") {

TEST_CASE("near-degenerate logits always pick the hot phase") {
  const auto s = mock_generate(with_bias(10, -10, -10, -10), sample_features(), 4, {}, 3);
  REQUIRE(s.size() == 4);
  for (const auto& r : s) CHECK(r.phase == Phase::kETWT);
}

TEST_CASE("uniform logits sample each phase a quarter of the time") {
  const auto s = mock_generate(MockPolicyParams{}, sample_features(), 10000, {}, 21);
  for (int c : phase_counts(s)) {
    CHECK(c / 10000.0 > 0.23);
    CHECK(c / 10000.0 < 0.27);
  }
}

TEST_CASE("low temperature concentrates on the argmax") {
  SamplingParams cold;
  cold.temperature = 0.01;
  const auto s = mock_generate(with_bias(0.2, 0.1, 0.0, 0.15), sample_features(), 10000, cold, 4);
  CHECK(phase_counts(s)[0] / 10000.0 > 0.99);
}

TEST_CASE("top-k and top-p truncate the candidate set") {
  const MockPolicyParams p = with_bias(2.0, 1.5, 0.0, -1.0);
  SamplingParams k1;
  k1.top_k = 1;
  CHECK(phase_counts(mock_generate(p, sample_features(), 500, k1, 1))[0] == 500);
  SamplingParams k2;
  k2.top_k = 2;
  const auto c2 = phase_counts(mock_generate(p, sample_features(), 2000, k2, 1));
  CHECK(c2[2] == 0);
  CHECK(c2[3] == 0);
  SamplingParams nucleus;
  nucleus.top_p = 0.5;  // ETWT alone holds more than half the mass
  CHECK(phase_counts(mock_generate(p, sample_features(), 500, nucleus, 1))[0] == 500);
}

TEST_CASE("generated texts parse to the sampled phase") {
  std::mt19937_64 rng(2);
  MockPolicyParams p;
  p.weight = testing::random_tensor(kPromptFeatures, kNumPhases, rng);
  for (const auto& s : mock_generate(p, sample_features(), 200, {}, 9)) {
    REQUIRE(s.phase.has_value());
    CHECK(parse_response(s.text) == ParseResult::ok(*s.phase));
    CHECK(s.logprob == doctest::Approx(mock_logprob(p, sample_features(), s)).epsilon(1e-12));
  }
}

TEST_CASE("seeded determinism") {
  const MockPolicyParams p;
  CHECK(mock_generate(p, sample_features(), 16, {}, 5) == mock_generate(p, sample_features(), 16, {}, 5));
  CHECK_FALSE(mock_generate(p, sample_features(), 16, {}, 5) ==
              mock_generate(p, sample_features(), 16, {}, 6));
}

TEST_CASE("uniform log-probability") {
  const MockPolicyParams p;
  REQUIRE(p.templates[0].size() == 2);
  const ResponseSample r{p.templates[1][0], Phase::kNTST, std::nullopt};
  CHECK(mock_logprob(p, sample_features(), r) == -2.0794415416798357);
  CHECK(std::abs(mock_logprob(p, sample_features(), r) - (std::log(0.25) + std::log(0.5))) < 1e-15);
}

TEST_CASE("one-hot logits give the template factor") {
  const MockPolicyParams p = with_bias(-40, -40, 40, -40);
  const ResponseSample r{p.templates[2][1], Phase::kELWL, std::nullopt};
  CHECK(mock_logprob(p, sample_features(), r) == doctest::Approx(std::log(0.5)).epsilon(1e-12));
}

TEST_CASE("log-probabilities form a distribution") {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    MockPolicyParams p;
    p.weight = testing::random_tensor(kPromptFeatures, kNumPhases, rng, -3, 3);
    p.bias = testing::random_tensor(1, kNumPhases, rng, -3, 3);
    double total = 0.0;
    for (Phase ph : kAllPhases) {
      for (const auto& t : p.templates[index_of(ph)]) {
        total += std::exp(mock_logprob(p, sample_features(), {t, ph, std::nullopt}));
      }
    }
    CHECK(std::abs(total - 1.0) < 1e-9);
  }
}

TEST_CASE("log-probability gradient matches finite differences") {
  std::mt19937_64 rng(17);
  MockPolicyParams p;
  p.weight = testing::random_tensor(kPromptFeatures, kNumPhases, rng);
  p.bias = testing::random_tensor(1, kNumPhases, rng);
  Tensor features(3, kPromptFeatures);
  for (int r = 0; r < 3; ++r) {
    features.row(r) = testing::random_tensor(1, kPromptFeatures, rng, 0, 5).array().round().matrix();
  }
  const std::vector<Phase> phases{Phase::kNLSL, Phase::kETWT, Phase::kELWL};

  Graph g;
  Var w = g.leaf(p.weight);
  Var b = g.leaf(p.bias);
  Var total = sum(log(mock_phase_prob(g, w, b, features, phases, p.feature_scale)));
  const auto grads = g.gradient(total, {w, b});

  auto objective = [&](const MockPolicyParams& q) {
    double s = 0.0;
    for (int r = 0; r < 3; ++r) {
      const auto& t = q.templates[index_of(phases[r])].front();
      s += mock_logprob(q, features.row(r), {t, phases[r], std::nullopt});
    }
    return s;
  };
  const Tensor nw = testing::numeric_grad(
      [&](const Tensor& x) {
        MockPolicyParams q = p;
        q.weight = x;
        return objective(q);
      },
      p.weight);
  const Tensor nb = testing::numeric_grad(
      [&](const Tensor& x) {
        MockPolicyParams q = p;
        q.bias = x;
        return objective(q);
      },
      p.bias);
  CHECK(testing::max_rel_err(grads.at(w.id), nw) < 1e-6);
  CHECK(testing::max_rel_err(grads.at(b.id), nb) < 1e-6);
}

TEST_CASE("unknown templates and bad parameters are rejected") {
  const MockPolicyParams p;
  CHECK_THROWS_AS(find_template(p.templates, "<signal>ETWT</signal>"), Error);
  CHECK_THROWS_AS(mock_logprob(p, sample_features(), {"free text", Phase::kETWT, std::nullopt}),
                  Error);
  const auto [phase, index] = find_template(p.templates, p.templates[3][1]);
  CHECK(phase == Phase::kNLSL);
  CHECK(index == 1);

  MockPolicyParams bad;
  bad.weight = Tensor::Zero(3, 4);
  CHECK_THROWS_AS(bad.validate(), Error);
  SamplingParams s;
  s.top_p = 0.0;
  CHECK_THROWS_AS(s.validate(), Error);
}

TEST_CASE("mock policy checkpoint round trip") {
  std::mt19937_64 rng(1);
  MockPolicyParams p;
  p.weight = testing::random_tensor(kPromptFeatures, kNumPhases, rng);
  p.bias = testing::random_tensor(1, kNumPhases, rng);
  const auto dir = testing::temp_dir("policy");
  save_mock_policy(dir / "policy.json", p);
  CHECK(load_mock_policy(dir / "policy.json") == p);
  SamplingParams s;
  s.temperature = 0.7;
  s.top_k = 3;
  const SamplingParams back = sampling_from_json(sampling_to_json(s));
  CHECK(back.temperature == 0.7);
  CHECK(back.top_k == 3);
}

TEST_CASE("endpoint stub echoing one tag") {
  std::string seen_body;
  testing::StubServer stub([&](const httplib::Request& req, httplib::Response& res) {
    seen_body = req.body;
    res.set_content(testing::choices_body({"<signal>NTST</signal>"}), "application/json");
  });
  const auto out = llm_generate(fast_endpoint(stub.url()), "prompt text", 1, {});
  REQUIRE(out.size() == 1);
  CHECK(parse_response(out[0].text) == ParseResult::ok(Phase::kNTST));
  const auto req = nlohmann::json::parse(seen_body);
  CHECK(req.at("prompt") == "prompt text");
  CHECK(req.at("n") == 1);
  CHECK(req.at("model") == "dglight");
}

TEST_CASE("endpoint stub keeps choice order") {
  const std::vector<std::string> texts{"a <signal>ETWT</signal>", "b", "c <signal>NLSL</signal>", "d"};
  testing::StubServer stub([&](const httplib::Request&, httplib::Response& res) {
    res.set_content(testing::choices_body(texts), "application/json");
  });
  LlmPolicy policy(fast_endpoint(stub.url("/v1/completions")));
  const auto out = policy.generate({"p", 0, 0}, {}, 4, 0);
  REQUIRE(out.size() == 4);
  for (int i = 0; i < 4; ++i) CHECK(out[i].text == texts[i]);
}

TEST_CASE("malformed bodies fail after retries") {
  testing::StubServer stub([](const httplib::Request&, httplib::Response& res) {
    res.set_content("{\"choices\": 7", "application/json");
  });
  CHECK_THROWS_AS(llm_generate(fast_endpoint(stub.url()), "p", 2, {}), TransportError);
  CHECK(stub.hits() == 3);
}

TEST_CASE("wrong number of choices counts as malformed") {
  testing::StubServer stub([](const httplib::Request&, httplib::Response& res) {
    res.set_content(testing::choices_body({"only one"}), "application/json");
  });
  CHECK_THROWS_AS(llm_generate(fast_endpoint(stub.url()), "p", 4, {}), TransportError);
}

TEST_CASE("non-2xx status surfaces an excerpt without retrying") {
  testing::StubServer stub([](const httplib::Request&, httplib::Response& res) {
    res.status = 503;
    res.set_content("model is loading", "text/plain");
  });
  try {
    llm_generate(fast_endpoint(stub.url()), "p", 1, {});
    FAIL("expected a transport error");
  } catch (const TransportError& e) {
    CHECK(std::string(e.what()).find("503") != std::string::npos);
    CHECK(std::string(e.what()).find("model is loading") != std::string::npos);
  }
  CHECK(stub.hits() == 1);
}

TEST_CASE("unreachable endpoint") {
  LlmEndpoint e = fast_endpoint("http://127.0.0.1:1");
  e.timeout_s = 0.5;
  e.attempts = 2;
  CHECK_THROWS_AS(llm_generate(e, "p", 1, {}), TransportError);
}

}  // TEST_SUITE
