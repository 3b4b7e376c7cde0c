#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "soapbench/prompts.hpp"

namespace soapbench {

enum class BinaryOutcome { kConcordant, kNotConcordant, kUnparseable };

std::string_view to_string(BinaryOutcome outcome);

/// "<001>" alone -> concordant, "<000>" alone -> not concordant, both or
/// neither -> unparseable. The code may be embedded in prose.
BinaryOutcome parse_binary_verdict(std::string_view raw);

struct CssRecord {
  int similarity = 0;  // 0..10
  int complexity = 0;  // 0..10
  bool comorbidity = false;
  std::string icd_label;
  std::string difference;

  bool operator==(const CssRecord&) const = default;
};

/// Parses "Similarity: X/10 | Complexity: Y/10 | Co-morbidity: Yes/No |
/// ICD: label" plus an optional "Difference:" line. Field names are
/// case-insensitive. Throws kCssParseFailure when the header line is absent,
/// a field is missing, or a score is outside 0..10. A missing Difference line
/// yields an empty string and a message in `warnings`.
CssRecord parse_css(std::string_view raw, std::vector<std::string>* warnings = nullptr);

nlohmann::ordered_json to_json(const CssRecord& css);
CssRecord css_from_json(const nlohmann::json& j);

// One backend call and its interpretation. Binary kinds carry `outcome`; the
// CSS kind carries `css` when parsing succeeded. `error` is set when the
// backend itself failed, in which case no verdict was obtained.
struct JudgeVerdict {
  std::string encounter_id;
  PromptKind prompt_kind = PromptKind::kTop1Concordance;
  std::uint32_t run_index = 0;
  std::uint32_t attempt = 0;  // 0 = first call, 1 = retry
  std::optional<BinaryOutcome> outcome;
  std::optional<CssRecord> css;
  std::string raw_response;
  BlindingMap blinding;
  std::int64_t latency_ms = 0;
  std::string model_id;
  std::string error;

  bool backend_failed() const noexcept { return !error.empty(); }
  /// True when the response yielded a usable vote or CSS record.
  bool usable() const noexcept;
};

nlohmann::ordered_json to_json(const JudgeVerdict& v, bool include_latency = true);
JudgeVerdict verdict_from_json(const nlohmann::json& j);

}  // namespace soapbench
