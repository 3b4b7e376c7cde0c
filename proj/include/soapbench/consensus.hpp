#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "soapbench/backend.hpp"
#include "soapbench/checkpoint.hpp"
#include "soapbench/note.hpp"
#include "soapbench/verdict.hpp"

namespace soapbench {

struct ConsensusConfig {
  std::uint32_t runs = 3;  // odd, >= 1
  std::uint64_t seed = 0;
  std::string model_id = "gpt-4o";
  bool retry_unparseable = true;
};

/// Throws kConfigError unless runs is odd and positive.
void validate(const ConsensusConfig& config);

// kScored is the CSS counterpart of a decision: enough runs produced a CSS
// record to aggregate one.
enum class Decision { kConcordant, kNotConcordant, kIndeterminate, kScored };

std::string_view to_string(Decision decision);
Decision decision_from_string(std::string_view s);

struct VoteSplit {
  std::size_t concordant = 0;
  std::size_t not_concordant = 0;
  std::size_t unparseable = 0;
  std::size_t scored = 0;  // CSS runs that parsed

  bool operator==(const VoteSplit&) const = default;
};

/// ceil(runs / 2): the parseable runs needed before any decision is made.
constexpr std::size_t quorum(std::uint32_t runs) { return (runs + 1) / 2; }

/// Strict majority over parseable runs; indeterminate below quorum or on a tie.
Decision decide_binary(const VoteSplit& split, std::uint32_t runs);

/// Per-field median (lower median for an even count) of similarity and
/// complexity, majority co-morbidity (ties -> No), and the modal ICD label
/// compared case-insensitively (ties -> earliest run). The Difference text
/// comes from the earliest run carrying the modal label. Returns nullopt
/// below quorum.
std::optional<CssRecord> aggregate_css(std::span<const CssRecord> records, std::uint32_t runs);

struct ConsensusResult {
  std::string encounter_id;
  PromptKind prompt_kind = PromptKind::kTop1Concordance;
  std::vector<JudgeVerdict> runs;  // final attempt of each run, in run order
  Decision decision = Decision::kIndeterminate;
  std::optional<CssRecord> css;
  VoteSplit vote_split;
};

/// Executes config.runs blinded calls (an unparseable or failed call is
/// retried once) and aggregates them. Every call is appended to `store` when
/// one is given; calls already present there are reused instead of repeated.
/// Throws kBackendExhausted when no run obtained any response.
ConsensusResult run_consensus(const EncounterPair& pair, PromptKind kind, JudgeBackend& backend,
                              const ConsensusConfig& config, CheckpointStore* store = nullptr);

nlohmann::ordered_json to_json(const ConsensusResult& result);
ConsensusResult consensus_from_json(const nlohmann::json& j);

struct AdjudicationConfig {
  ConsensusConfig consensus;
  std::vector<PromptKind> kinds{kAdjudicationKinds.begin(), kAdjudicationKinds.end()};
  std::size_t parallelism = 1;
};

struct PairFailure {
  std::string encounter_id;
  PromptKind prompt_kind;
  std::string reason;
};

struct AdjudicationOutcome {
  std::vector<ConsensusResult> results;  // corpus order, then kind order
  std::vector<PairFailure> failures;

  /// Distinct encounter ids with at least one failed prompt kind, corpus order.
  std::vector<std::string> failed_encounters() const;
};

/// Runs every enabled kind for every pair, fanning out across pairs. A
/// BackendExhausted pair is recorded in `failures` and does not stop the rest.
AdjudicationOutcome adjudicate_corpus(const Corpus& corpus, JudgeBackend& backend,
                                      const AdjudicationConfig& config, CheckpointStore* store = nullptr);

}  // namespace soapbench
