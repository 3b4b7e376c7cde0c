#pragma once

#include <atomic>
#include <chrono>
#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include <json.hpp>

namespace soapbench {

// A chat-completion service: one prompt in, one completion out. Failures are
// reported as Error(kBackendError).
class JudgeBackend {
 public:
  virtual ~JudgeBackend() = default;
  virtual std::string complete(const std::string& model_id, const std::string& prompt) = 0;
};

// Canned responses selected by rules over the prompt text.
//
// Script file (JSON):
//   {
//     "default": "<001>",                      // optional fallback response
//     "rules": [
//       {"contains": ["Determine if the primary", "[SYN-0007]"],  // all must occur
//        "regex": ["SOAP NOTE A"],              // optional, all must match
//        "prompt_sha256": "…",                  // optional exact-prompt key
//        "respond": "<000>"},                   // string, or list used in turn
//       {"contains": ["[SYN-0099]"], "fail": true}  // simulate an outage
//     ]
//   }
//
// The first matching rule wins. A list-valued "respond" returns its entries
// in order for successive calls with the same prompt and then repeats the
// last one; the per-prompt counter keeps this deterministic when calls for
// different encounters interleave.
class ScriptedBackend final : public JudgeBackend {
 public:
  struct Rule {
    std::vector<std::string> contains;
    std::vector<std::regex> patterns;
    std::string prompt_sha256;
    std::vector<std::string> responses;
    bool fail = false;
  };

  explicit ScriptedBackend(std::vector<Rule> rules, std::optional<std::string> fallback = std::nullopt);

  /// Throws kConfigError on a malformed script.
  static std::unique_ptr<ScriptedBackend> from_json(const nlohmann::json& script);
  static std::unique_ptr<ScriptedBackend> from_file(const std::filesystem::path& path);

  std::string complete(const std::string& model_id, const std::string& prompt) override;

  std::size_t calls() const noexcept { return calls_.load(); }

 private:
  std::vector<Rule> rules_;
  std::optional<std::string> fallback_;
  bool needs_hash_ = false;
  std::atomic<std::size_t> calls_{0};
  std::mutex mu_;
  std::map<std::pair<std::size_t, std::string>, std::size_t> sequence_;
};

struct HttpBackendOptions {
  std::string endpoint = "https://api.openai.com/v1";
  std::string credential_env = "OPENAI_API_KEY";
  double temperature = 0.0;
  std::chrono::milliseconds timeout{60000};
  int max_retries = 2;
  std::chrono::milliseconds initial_backoff{500};
};

// OpenAI-compatible POST {endpoint}/chat/completions with a single user
// message. Transport errors, 429 and 5xx are retried with exponential
// backoff; other statuses fail immediately.
class HttpChatBackend final : public JudgeBackend {
 public:
  explicit HttpChatBackend(HttpBackendOptions options);
  std::string complete(const std::string& model_id, const std::string& prompt) override;

 private:
  HttpBackendOptions options_;
};

}  // namespace soapbench
