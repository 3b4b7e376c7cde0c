#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "soapbench/prompts.hpp"
#include "soapbench/semantic.hpp"

namespace soapbench {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFatal = 1;
inline constexpr int kExitPartial = 2;

std::string_view version();

struct RunConfig {
  std::filesystem::path corpus;
  std::filesystem::path out;
  std::string backend = "scripted";  // scripted | http
  std::filesystem::path script;      // rules file for the scripted backend
  std::string endpoint = "https://api.openai.com/v1";
  std::string credential_env = "OPENAI_API_KEY";
  std::string model = "gpt-4o";
  std::uint32_t runs = 3;
  std::uint64_t seed = 0;
  std::vector<std::string> providers{"hash16"};
  std::vector<EmbeddingProviderSpec> provider_specs;  // definitions beyond the built-in hashN ids
  std::size_t parallelism = 1;
  std::vector<PromptKind> prompts{kAdjudicationKinds.begin(), kAdjudicationKinds.end()};
  std::string host = "127.0.0.1";
  int port = 8765;
};

/// Throws kConfigError.
void validate(const RunConfig& config);

/// Every field except credentials, in a fixed order.
nlohmann::ordered_json to_json(const RunConfig& config);

/// Overlays the keys present in `j` onto `base`. Keys that look like secrets
/// are rejected: credentials come only from the environment. Throws
/// kConfigError.
RunConfig apply_config_json(RunConfig base, const nlohmann::json& j);

/// Overlays SOAPBENCH_* variables read through `getenv`.
RunConfig apply_environment(RunConfig base, const std::function<const char*(const char*)>& getenv);

/// Resolves provider ids to specs. "hashN" is the built-in hash provider of
/// dimension N; other ids must appear in provider_specs.
std::vector<EmbeddingProviderSpec> resolve_providers(const RunConfig& config);

// Files in the output directory.
inline constexpr const char* kExclusionsFile = "exclusions.jsonl";
inline constexpr const char* kSimilarityFile = "similarity.jsonl";
inline constexpr const char* kVerdictsFile = "verdicts.jsonl";
inline constexpr const char* kConsensusFile = "consensus.jsonl";
inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kTriageDir = "triage";
inline constexpr const char* kEmbeddingCacheDir = "cache";

// Subcommands. Each returns an exit code and reports errors on stderr via
// the logger.
int cmd_run(const RunConfig& config);
int cmd_judge(const RunConfig& config);
int cmd_metrics(const RunConfig& config);
int cmd_report(const RunConfig& config);
int cmd_triage_next(const RunConfig& config, const std::string& reviewer, std::ostream& out);
int cmd_triage_verdict(const RunConfig& config, const std::string& encounter_id, const std::string& category,
                       const std::string& rationale, const std::string& reviewer, std::ostream& out);
int cmd_triage_summary(const RunConfig& config, const std::string& reviewer, std::ostream& out);
/// Serves until SIGINT or SIGTERM. Throws kMissingReport or kPortInUse.
int cmd_serve(const RunConfig& config);

/// Full command-line entry point.
int run_cli(int argc, const char* const* argv);

}  // namespace soapbench
