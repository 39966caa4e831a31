#include "dglight/prompting.hpp"

#include "dglight/error.hpp"

#include <array>
#include <charconv>
#include <vector>

namespace dglight {

namespace {

constexpr std::string_view kBlank = "\n\n";
constexpr std::string_view kSectionBreak = "\n\n\n";

std::string_view phase_description(Phase p) {
  switch (p) {
    case Phase::kETWT: return "Eastern and western through lanes.";
    case Phase::kNTST: return "Northern and southern through lanes.";
    case Phase::kELWL: return "Eastern and western left-turn lanes.";
    case Phase::kNLSL: return "Northern and southern left-turn lanes.";
  }
  return "";
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

std::string count_line(std::string_view label, int a, int b, Direction da, Direction db) {
  return "- " + std::string(label) + ": " + std::to_string(a) + " (" +
         std::string(direction_name(da)) + "), " + std::to_string(b) + " (" +
         std::string(direction_name(db)) + "), " + std::to_string(a + b) + " (Total)";
}

std::string optional_count(const std::optional<int>& v) {
  return v ? std::to_string(*v) : std::string("NA");
}

std::string phase_block(const IntersectionObservation& obs, Phase p) {
  const auto [da, db] = phase_movements(p).approaches;
  const LaneCounts& a = obs.lane(p, 0);
  const LaneCounts& b = obs.lane(p, 1);
  const NeighborTotals& n = obs.neighbors[index_of(p)];
  std::vector<std::string> lines = {
      "Signal: " + std::string(phase_name(p)),
      "Relieves: " + std::string(phase_description(p)),
      count_line("Early queued", a.queued, b.queued, da, db),
  };
  for (int s = 0; s < 3; ++s) {
    lines.push_back(count_line("Segment " + std::to_string(s + 1), a.segments[s], b.segments[s], da, db));
  }
  lines.push_back("- Neighbor incoming totals: " + optional_count(n.incoming[0]) + " (" +
                  std::string(direction_name(da)) + "), " + optional_count(n.incoming[1]) + " (" +
                  std::string(direction_name(db)) + "), " + std::to_string(n.known_total) +
                  " (Known total), " + std::to_string(n.available) + "/2 available");
  return join(lines, kBlank);
}

const std::vector<std::string>& trailing_sections() {
  static const std::vector<std::string> sections = {
      join({"The state description above lists:",
            "- The group of lanes relieved under each traffic light phase.",
            "- The number of early queued vehicles in the allowed lanes of each signal.",
            "- The number of approaching vehicles in different segments of the allowed lanes of "
            "each signal.",
            "- Neighbor incoming totals from adjacent intersections for each phase.",
            "- `NA` means that adjacent side has a virtual/missing neighbor and is excluded from "
            "`Known total`."},
           kBlank),
      join({"Question:",
            "Which is the most effective traffic signal that will most significantly improve the "
            "traffic condition during the next phase?"},
           kBlank),
      join({"Note:",
            "- Traffic congestion is primarily dictated by early queued vehicles, with the most "
            "significant impact.",
            "- You must pay the most attention to lanes with long queue lengths.",
            "- It is not urgent to consider vehicles in distant segments, since they are unlikely "
            "to reach the intersection soon."},
           kBlank),
      join({"Requirements:", "- Think step by step.",
            "- You can only choose one of the signals listed above.",
            "- Step 1: Provide a brief analysis identifying the optimal traffic signal.",
            "- Step 2: After finishing the analysis, answer with your chosen signal.",
            "- Include exactly one final decision tag in this format: <signal>PHASE</signal>, "
            "where PHASE is one of: ETWT, NTST, ELWL, NLSL."},
           kBlank),
  };
  return sections;
}

std::string_view trim(std::string_view s) {
  const auto ws = " \t\r\n\f\v";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  return s.substr(b, s.find_last_not_of(ws) - b + 1);
}

// Reads "<int> (" or "NA (" at pos; advances pos past the number.
std::optional<int> read_count(std::string_view text, size_t& pos) {
  if (text.substr(pos, 2) == "NA") {
    pos += 2;
    return std::nullopt;
  }
  int v = 0;
  auto [ptr, ec] = std::from_chars(text.data() + pos, text.data() + text.size(), v);
  if (ec != std::errc()) throw Error("prompt: expected a count at offset " + std::to_string(pos));
  pos = static_cast<size_t>(ptr - text.data());
  return v;
}

std::vector<std::optional<int>> line_counts(std::string_view text, std::string_view prefix,
                                            size_t& cursor, int n) {
  const size_t at = text.find(prefix, cursor);
  if (at == std::string_view::npos) {
    throw Error("prompt: missing line '" + std::string(trim(prefix)) + "'");
  }
  size_t pos = at + prefix.size();
  std::vector<std::optional<int>> out;
  for (int i = 0; i < n; ++i) {
    out.push_back(read_count(text, pos));
    const size_t next = text.find(", ", pos);
    if (i + 1 < n) {
      if (next == std::string_view::npos) throw Error("prompt: truncated count line");
      pos = next + 2;
    }
  }
  cursor = pos;
  return out;
}

}  // namespace

const std::string& default_task_description() {
  static const std::string text = join(
      {"You are an expert in traffic management.",
       "A traffic light regulates a four-way intersection with northern, southern, eastern, and "
       "western approaches, each containing two lanes: one for through traffic and one for "
       "left-turns. Each lane is further divided into three segments. Segment 1 is the closest to "
       "the intersection. Segment 2 is in the middle. Segment 3 is the farthest. In a lane, there "
       "may be early queued vehicles and approaching vehicles traveling in different segments. "
       "Early queued vehicles have already arrived at the intersection and await passage "
       "permission. Approaching vehicles will arrive at the intersection in the future.",
       "The traffic light has 4 signal phases. Each signal relieves vehicles' flow in a group of "
       "two specific lanes."},
      kBlank);
  return text;
}

PromptText render_prompt(const IntersectionObservation& obs, std::string_view task_description,
                         int step) {
  std::vector<std::string> phases = {"Available signal phases:"};
  for (Phase p : kAllPhases) {
    phases.push_back("- " + std::string(phase_name(p)) + ": " + std::string(phase_description(p)));
  }
  std::vector<std::string> sections = {std::string(task_description), join(phases, kBlank)};
  for (Phase p : kAllPhases) {
    std::string block = phase_block(obs, p);
    if (p == Phase::kETWT) block = "Current intersection state:" + std::string(kBlank) + block;
    sections.push_back(std::move(block));
  }
  for (const auto& s : trailing_sections()) sections.push_back(s);
  return {join(sections, kSectionBreak) + "\n", obs.intersection, step};
}

std::string_view invalid_reason_name(InvalidReason r) {
  switch (r) {
    case InvalidReason::kNoTag: return "no_tag";
    case InvalidReason::kMultipleTags: return "multiple_tags";
    case InvalidReason::kUnknownPhase: return "unknown_phase";
  }
  return "no_tag";
}

std::optional<InvalidReason> invalid_reason_from_name(std::string_view name) {
  for (InvalidReason r : {InvalidReason::kNoTag, InvalidReason::kMultipleTags,
                          InvalidReason::kUnknownPhase}) {
    if (invalid_reason_name(r) == name) return r;
  }
  return std::nullopt;
}

ParseResult parse_response(std::string_view text) {
  constexpr std::string_view open = "<signal>";
  constexpr std::string_view close = "</signal>";
  std::vector<std::string_view> payloads;
  size_t pos = 0;
  while ((pos = text.find(open, pos)) != std::string_view::npos) {
    const size_t start = pos + open.size();
    const size_t end = text.find(close, start);
    if (end == std::string_view::npos) break;
    payloads.push_back(text.substr(start, end - start));
    pos = end + close.size();
  }
  if (payloads.empty()) return ParseResult::invalid(InvalidReason::kNoTag);
  if (payloads.size() > 1) return ParseResult::invalid(InvalidReason::kMultipleTags);
  if (auto p = phase_from_name(trim(payloads.front()))) return ParseResult::ok(*p);
  return ParseResult::invalid(InvalidReason::kUnknownPhase);
}

std::string parse_result_name(const ParseResult& r) {
  if (r.valid()) return std::string(phase_name(*r.phase));
  return "invalid:" + std::string(invalid_reason_name(r.reason));
}

ParseResult parse_result_from_name(std::string_view name) {
  if (auto p = phase_from_name(name)) return ParseResult::ok(*p);
  constexpr std::string_view prefix = "invalid:";
  if (name.substr(0, prefix.size()) == prefix) {
    if (auto r = invalid_reason_from_name(name.substr(prefix.size()))) {
      return ParseResult::invalid(*r);
    }
  }
  throw Error("unknown parse outcome '" + std::string(name) + "'");
}

Eigen::RowVectorXd prompt_features(const IntersectionObservation& obs) {
  Eigen::RowVectorXd f(kPromptFeatures);
  for (Phase p : kAllPhases) {
    const int base = 8 * index_of(p);
    for (int side = 0; side < 2; ++side) {
      const LaneCounts& lane = obs.lane(p, side);
      f(base + side) = lane.queued;
      for (int s = 0; s < 3; ++s) f(base + 2 * (s + 1) + side) = lane.segments[s];
    }
    f(32 + index_of(p)) = obs.neighbors[index_of(p)].known_total;
  }
  return f;
}

Eigen::RowVectorXd prompt_features(std::string_view prompt) {
  Eigen::RowVectorXd f(kPromptFeatures);
  size_t cursor = 0;
  for (Phase p : kAllPhases) {
    const std::string header = "Signal: " + std::string(phase_name(p)) + "\n";
    cursor = prompt.find(header, cursor);
    if (cursor == std::string_view::npos) {
      throw Error("prompt: missing section for " + std::string(phase_name(p)));
    }
    const int base = 8 * index_of(p);
    const std::array<std::string_view, 4> labels = {"- Early queued: ", "- Segment 1: ",
                                                    "- Segment 2: ", "- Segment 3: "};
    for (int k = 0; k < 4; ++k) {
      const auto v = line_counts(prompt, labels[k], cursor, 2);
      if (!v[0] || !v[1]) throw Error("prompt: lane counts cannot be NA");
      f(base + 2 * k) = *v[0];
      f(base + 2 * k + 1) = *v[1];
    }
    const auto n = line_counts(prompt, "- Neighbor incoming totals: ", cursor, 3);
    if (!n[2]) throw Error("prompt: known total cannot be NA");
    f(32 + index_of(p)) = *n[2];
  }
  return f;
}

}  // namespace dglight
