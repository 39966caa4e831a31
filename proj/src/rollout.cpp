#include "dglight/rollout.hpp"

#include "dglight/error.hpp"
#include "dglight/seed.hpp"

#include <fstream>
#include <sstream>

namespace dglight {

using nlohmann::json;

namespace {

constexpr const char* kRecordSchema = "dglight.rollout";
constexpr const char* kRecordVersion = "1";

}  // namespace

void RolloutConfig::validate() const {
  if (k < 1) throw Error("rollout: k must be >= 1");
  episode.decisions();
}

std::vector<double> score_candidates(const QVector& q, const std::vector<ParseResult>& parses,
                                     double r_invalid) {
  std::vector<double> out;
  out.reserve(parses.size());
  for (const auto& p : parses) out.push_back(p.valid() ? q[*p.phase] : r_invalid);
  return out;
}

Selection select_executed(const std::vector<double>& rewards, const std::vector<ParseResult>& parses,
                          Phase fallback) {
  if (rewards.size() != parses.size()) throw Error("select_executed: rewards and parses differ in size");
  if (rewards.empty()) return {fallback, true};
  size_t best = 0;
  for (size_t j = 1; j < rewards.size(); ++j) {
    if (rewards[j] > rewards[best]) best = j;
  }
  if (!parses[best].valid()) return {fallback, true};
  return {*parses[best].phase, false};
}

EpisodeResult collect_episode(SimState env, const Policy& policy, const FrozenCritic& critic,
                              const RolloutConfig& cfg) {
  cfg.validate();
  EpisodeResult result;
  const RoadNetwork& net = env.network();
  const Adjacency adjacency = critic_adjacency(net);
  const auto& ids = net.controlled();
  const int decisions = cfg.episode.decisions();

  env.advance_to_boundary();
  for (int step = 0; step < decisions; ++step) {
    const auto observations = observe_all(env);
    const auto q = critic.q_forward(observations, adjacency);
    std::vector<RolloutRecord> batch;
    JointAction joint;
    try {
      for (size_t i = 0; i < ids.size(); ++i) {
        const PromptText prompt =
            render_prompt(observations[i], default_task_description(), step);
        const auto samples = policy.generate(
            prompt, observations[i], cfg.k,
            derive_seed(cfg.seed, {static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(ids[i])}));
        if (samples.size() != static_cast<size_t>(cfg.k)) {
          throw TransportError("policy returned " + std::to_string(samples.size()) +
                               " samples, expected " + std::to_string(cfg.k));
        }
        std::vector<ParseResult> parses;
        for (const auto& s : samples) parses.push_back(parse_response(s.text));
        const auto rewards = score_candidates(q[i], parses, cfg.r_invalid);
        const Selection sel = select_executed(rewards, parses, q[i]);

        RolloutRecord rec;
        rec.step = step;
        rec.intersection = net.intersection(ids[i]).name;
        rec.prompt = prompt.text;
        rec.q_values = q[i];
        for (size_t j = 0; j < samples.size(); ++j) {
          rec.candidates.push_back({samples[j].text, parses[j], rewards[j]});
        }
        rec.executed = sel.phase;
        rec.fallback = sel.fallback;
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

json record_to_json(const RolloutRecord& r) {
  json candidates = json::array();
  for (const auto& c : r.candidates) {
    candidates.push_back({{"text", c.text}, {"parse", parse_result_name(c.parse)}, {"reward", c.reward}});
  }
  json j = {{"step", r.step},
            {"intersection", r.intersection},
            {"prompt", r.prompt},
            {"q_values", r.q_values.values},
            {"candidates", candidates},
            {"executed", phase_name(r.executed)},
            {"fallback", r.fallback}};
  if (r.js) j["js"] = *r.js;
  return j;
}

RolloutRecord record_from_json(const json& j) {
  RolloutRecord r;
  r.step = j.at("step").get<int>();
  r.intersection = j.at("intersection").get<std::string>();
  r.prompt = j.at("prompt").get<std::string>();
  const auto q = j.at("q_values").get<std::vector<double>>();
  if (q.size() != kNumPhases) throw SchemaError("q_values must hold four numbers");
  std::copy(q.begin(), q.end(), r.q_values.values.begin());
  for (const auto& c : j.at("candidates")) {
    r.candidates.push_back({c.at("text").get<std::string>(),
                            parse_result_from_name(c.at("parse").get<std::string>()),
                            c.at("reward").get<double>()});
  }
  const auto executed = phase_from_name(j.at("executed").get<std::string>());
  if (!executed) throw SchemaError("unknown executed phase");
  r.executed = *executed;
  r.fallback = j.at("fallback").get<bool>();
  if (j.contains("js")) r.js = j.at("js");
  return r;
}

void persist_records(const std::vector<RolloutRecord>& records, const std::filesystem::path& path,
                     bool truncated) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << json{{"schema", kRecordSchema}, {"version", kRecordVersion}, {"truncated", truncated}}.dump()
      << '\n';
  for (const auto& r : records) out << record_to_json(r).dump() << '\n';
  if (!out) throw Error("write failed for " + path.string());
}

RecordFile load_record_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  RecordFile file;
  std::string line;
  int number = 0;
  auto fail = [&](const std::string& why) {
    throw SchemaError(path.string() + ": line " + std::to_string(number) + ": " + why);
  };
  while (std::getline(in, line)) {
    ++number;
    json doc;
    try {
      doc = json::parse(line);
    } catch (const std::exception& e) {
      fail(std::string("not valid JSON (") + e.what() + ")");
    }
    if (number == 1) {
      if (!doc.is_object() || doc.value("schema", "") != kRecordSchema ||
          doc.value("version", "") != kRecordVersion) {
        fail("expected a dglight.rollout version 1 header");
      }
      file.truncated = doc.value("truncated", false);
      continue;
    }
    try {
      file.records.push_back(record_from_json(doc));
    } catch (const std::exception& e) {
      fail(e.what());
    }
  }
  return file;
}

}  // namespace dglight
