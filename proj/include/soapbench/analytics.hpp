#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "soapbench/consensus.hpp"
#include "soapbench/note.hpp"
#include "soapbench/semantic.hpp"
#include "soapbench/surface.hpp"

namespace soapbench {

enum class Sidedness { kTwoSided, kOneSidedUpper };

struct ProportionEstimate {
  std::size_t successes = 0;
  std::size_t n = 0;
  double point = 0;
  double ci_low = 0;
  double ci_high = 0;
  double level = 0.95;
  Sidedness sided = Sidedness::kTwoSided;
};

/// Exact Clopper-Pearson interval. The one-sided upper bound for zero
/// successes is the closed form 1 - (1 - level)^(1/n). Throws kDomainError
/// unless 0 <= successes <= n, n >= 1 and 0 < level < 1.
ProportionEstimate proportion_ci(std::size_t successes, std::size_t n, double level = 0.95,
                                 Sidedness sided = Sidedness::kTwoSided);

struct MeanSd {
  double mean = 0;
  double sd = 0;  // sample SD (n - 1); 0 when n == 1
  std::size_t n = 0;
};

/// Throws kEmptyInput on an empty list.
MeanSd mean_sd(std::span<const double> values);

enum class ComplexityBand { kLow, kModerate, kHigh };

std::string_view to_string(ComplexityBand band);
/// low: 0-3, moderate: 4-6, high: 7-10.
ComplexityBand complexity_band(int complexity);

struct ComplexityStratum {
  ComplexityBand label = ComplexityBand::kLow;
  std::size_t count = 0;
  double share = 0;
  std::optional<double> css_mean;  // absent when the stratum is empty
};

// Decisions for one binary prompt kind across the cohort. Indeterminate
// decisions are tallied separately and counted as non-concordant in the
// estimate.
struct DecisionTally {
  std::size_t concordant = 0;
  std::size_t not_concordant = 0;
  std::size_t indeterminate = 0;
  ProportionEstimate estimate;
};

struct SimilarityProfile {
  std::string encounter_id;
  SurfaceScores surface;
  SemanticProfile semantic;
};

nlohmann::ordered_json to_json(const SimilarityProfile& p);
SimilarityProfile similarity_from_json(const nlohmann::json& j);

struct CohortReport {
  std::size_t pairs = 0;
  std::optional<DecisionTally> top1;
  std::optional<DecisionTally> top4;
  std::optional<DecisionTally> plan;
  // Events are screens whose decision was not concordant (an unsupported
  // item was flagged) or indeterminate; the estimate is the one-sided upper
  // bound on the event rate.
  std::optional<DecisionTally> hallucination;
  std::optional<MeanSd> css;
  std::size_t css_unscored = 0;
  std::vector<ComplexityStratum> strata;
  std::optional<MeanSd> tfidf;
  std::optional<MeanSd> jaccard;
  std::optional<MeanSd> levenshtein;
  std::map<std::string, MeanSd> semantic;
  std::vector<std::string> discordant_ids;
  std::vector<std::pair<std::string, std::size_t>> diagnosis_frequency;
  std::vector<std::string> notes;
  nlohmann::ordered_json manifest = nlohmann::ordered_json::object();
};

struct SummaryOptions {
  std::set<PromptKind> required{PromptKind::kTop1Concordance, PromptKind::kTop4Concordance,
                                PromptKind::kTreatmentPlan};
  double level = 0.95;
};

/// Aggregates one cohort. Throws kMissingDecision when a pair lacks a
/// required kind, or lacks a kind that other pairs have.
CohortReport summarize(const Corpus& corpus, std::span<const ConsensusResult> results,
                       std::span<const SimilarityProfile> profiles,
                       nlohmann::ordered_json manifest = nlohmann::ordered_json::object(),
                       const SummaryOptions& options = {});

nlohmann::ordered_json to_json(const CohortReport& report);
CohortReport report_from_json(const nlohmann::json& j);

enum class ReportFormat { kJson, kCsv, kText };

// File names written by emit_report.
inline constexpr const char* kReportJson = "report.json";
inline constexpr const char* kStrataCsv = "strata.csv";
inline constexpr const char* kSimilarityCsv = "similarity.csv";
inline constexpr const char* kFrequencyCsv = "frequency.csv";
inline constexpr const char* kSummaryTxt = "summary.txt";

std::string render_strata_csv(const CohortReport& report);
std::string render_similarity_csv(const CohortReport& report);
std::string render_frequency_csv(const CohortReport& report);
std::string render_summary_text(const CohortReport& report);

/// Writes the requested formats into `dir` and returns the paths written.
/// Throws kIoError.
std::vector<std::filesystem::path> emit_report(const CohortReport& report, const std::filesystem::path& dir,
                                               const std::set<ReportFormat>& formats = {
                                                   ReportFormat::kJson, ReportFormat::kCsv, ReportFormat::kText});

}  // namespace soapbench
