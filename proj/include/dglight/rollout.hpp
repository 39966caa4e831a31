#pragma once

// Critic-scored rollout collection and the line-delimited record format.

#include "dglight/critic.hpp"
#include "dglight/episode.hpp"
#include "dglight/policy.hpp"
#include "dglight/prompting.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace dglight {

struct RolloutConfig {
  int k = 4;
  double r_invalid = 0.0;
  EpisodeSpec episode;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Candidate {
  std::string text;
  ParseResult parse;
  double reward = 0.0;

  bool operator==(const Candidate&) const = default;
};

struct RolloutRecord {
  int step = 0;
  std::string intersection;
  std::string prompt;
  QVector q_values;
  std::vector<Candidate> candidates;
  Phase executed = Phase::kETWT;
  bool fallback = false;
  std::optional<nlohmann::json> js;  // horizon settings for joint-scored records

  bool operator==(const RolloutRecord&) const = default;
};

std::vector<double> score_candidates(const QVector& q, const std::vector<ParseResult>& parses,
                                     double r_invalid);

struct Selection {
  Phase phase = Phase::kETWT;
  bool fallback = false;
};

// Argmax over rewards, ties to the lowest candidate index. If the winner is
// invalid the fallback phase is executed instead.
Selection select_executed(const std::vector<double>& rewards, const std::vector<ParseResult>& parses,
                          Phase fallback);
inline Selection select_executed(const std::vector<double>& rewards,
                                 const std::vector<ParseResult>& parses, const QVector& q) {
  return select_executed(rewards, parses, q.argmax());
}

struct EpisodeResult {
  std::vector<RolloutRecord> records;
  MetricsReport metrics;
  bool truncated = false;
  std::string error;
};

EpisodeResult collect_episode(SimState env, const Policy& policy, const FrozenCritic& critic,
                              const RolloutConfig& cfg);

nlohmann::json record_to_json(const RolloutRecord& r);
RolloutRecord record_from_json(const nlohmann::json& j);

struct RecordFile {
  std::vector<RolloutRecord> records;
  bool truncated = false;
};

// First line is a schema header; one record per following line.
void persist_records(const std::vector<RolloutRecord>& records, const std::filesystem::path& path,
                     bool truncated = false);
RecordFile load_record_file(const std::filesystem::path& path);
inline std::vector<RolloutRecord> load_records(const std::filesystem::path& path) {
  return load_record_file(path).records;
}

}  // namespace dglight
