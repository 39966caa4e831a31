#pragma once

// Natural-language state prompts and decision-tag parsing.

#include "dglight/phase.hpp"
#include "dglight/simulator.hpp"

#include <Eigen/Core>

#include <optional>
#include <string>
#include <string_view>

namespace dglight {

// Opening paragraphs used when no task description is supplied.
const std::string& default_task_description();

struct PromptText {
  std::string text;
  IntersectionId intersection = kNoId;
  int step = -1;

  bool operator==(const PromptText&) const = default;
};

PromptText render_prompt(const IntersectionObservation& obs,
                         std::string_view task_description = default_task_description(),
                         int step = -1);

enum class InvalidReason : std::uint8_t { kNoTag, kMultipleTags, kUnknownPhase };
std::string_view invalid_reason_name(InvalidReason r);
std::optional<InvalidReason> invalid_reason_from_name(std::string_view name);

struct ParseResult {
  std::optional<Phase> phase;  // set iff valid
  InvalidReason reason = InvalidReason::kNoTag;

  bool valid() const { return phase.has_value(); }
  static ParseResult ok(Phase p) { return {p, InvalidReason::kNoTag}; }
  static ParseResult invalid(InvalidReason r) { return {std::nullopt, r}; }
  bool operator==(const ParseResult& o) const {
    return phase == o.phase && (valid() || reason == o.reason);
  }
};

ParseResult parse_response(std::string_view text);
std::string parse_result_name(const ParseResult& r);  // "ETWT" or "invalid:no_tag"
ParseResult parse_result_from_name(std::string_view name);

// Policy features recoverable from the prompt text: per phase section
// [queued, seg1, seg2, seg3] for both sides, then the four known
// neighbour totals.
inline constexpr int kPromptFeatures = 36;
Eigen::RowVectorXd prompt_features(const IntersectionObservation& obs);
// Throws Error when the text is not a rendered prompt.
Eigen::RowVectorXd prompt_features(std::string_view prompt);

}  // namespace dglight
