#include "soapbench/backend.hpp"

#include <cstdlib>
#include <thread>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "soapbench/error.hpp"
#include "soapbench/util/append_log.hpp"
#include "soapbench/util/endpoint.hpp"
#include "soapbench/util/hash.hpp"

namespace soapbench {

ScriptedBackend::ScriptedBackend(std::vector<Rule> rules, std::optional<std::string> fallback)
    : rules_(std::move(rules)), fallback_(std::move(fallback)) {
  for (const auto& rule : rules_) {
    if (!rule.prompt_sha256.empty()) needs_hash_ = true;
    if (!rule.fail && rule.responses.empty()) {
      throw Error(ErrorCode::kConfigError, "scripted rule has neither 'respond' nor 'fail'");
    }
  }
}

namespace {

std::vector<std::string> string_list(const nlohmann::json& rule, const char* key) {
  std::vector<std::string> out;
  if (!rule.contains(key)) return out;
  const auto& v = rule[key];
  if (v.is_string()) {
    out.push_back(v.get<std::string>());
  } else if (v.is_array()) {
    for (const auto& s : v) out.push_back(s.get<std::string>());
  } else {
    throw Error(ErrorCode::kConfigError, std::string("scripted rule field '") + key + "' must be a string or list");
  }
  return out;
}

}  // namespace

std::unique_ptr<ScriptedBackend> ScriptedBackend::from_json(const nlohmann::json& script) {
  if (!script.is_object()) throw Error(ErrorCode::kConfigError, "script must be a JSON object");
  std::vector<Rule> rules;
  try {
    for (const auto& r : script.value("rules", nlohmann::json::array())) {
      Rule rule;
      rule.contains = string_list(r, "contains");
      for (const auto& pattern : string_list(r, "regex")) rule.patterns.emplace_back(pattern);
      rule.prompt_sha256 = r.value("prompt_sha256", "");
      rule.responses = string_list(r, "respond");
      rule.fail = r.value("fail", false);
      rules.push_back(std::move(rule));
    }
  } catch (const std::regex_error& e) {
    throw Error(ErrorCode::kConfigError, std::string("bad regex in script: ") + e.what());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kConfigError, std::string("bad script: ") + e.what());
  }
  std::optional<std::string> fallback;
  if (script.contains("default")) fallback = script["default"].get<std::string>();
  return std::make_unique<ScriptedBackend>(std::move(rules), std::move(fallback));
}

std::unique_ptr<ScriptedBackend> ScriptedBackend::from_file(const std::filesystem::path& path) {
  auto parsed = nlohmann::json::parse(util::read_file(path), nullptr, false);
  if (parsed.is_discarded()) throw Error(ErrorCode::kConfigError, "script is not valid JSON: " + path.string());
  return from_json(parsed);
}

std::string ScriptedBackend::complete(const std::string& /*model_id*/, const std::string& prompt) {
  ++calls_;
  const std::string hash = needs_hash_ ? util::sha256_hex(prompt) : std::string();
  for (std::size_t i = 0; i < rules_.size(); ++i) {
    const auto& rule = rules_[i];
    if (!rule.prompt_sha256.empty() && rule.prompt_sha256 != hash) continue;
    bool ok = true;
    for (const auto& needle : rule.contains) {
      if (prompt.find(needle) == std::string::npos) {
        ok = false;
        break;
      }
    }
    for (std::size_t p = 0; ok && p < rule.patterns.size(); ++p) {
      ok = std::regex_search(prompt, rule.patterns[p]);
    }
    if (!ok) continue;
    if (rule.fail) throw Error(ErrorCode::kBackendError, "scripted outage (rule " + std::to_string(i) + ")");
    if (rule.responses.size() == 1) return rule.responses.front();
    std::size_t n = 0;
    {
      std::lock_guard lock(mu_);
      n = sequence_[{i, hash.empty() ? util::sha256_hex(prompt) : hash}]++;
    }
    return rule.responses[std::min(n, rule.responses.size() - 1)];
  }
  if (fallback_) return *fallback_;
  throw Error(ErrorCode::kBackendError, "no scripted rule matches the prompt");
}

HttpChatBackend::HttpChatBackend(HttpBackendOptions options) : options_(std::move(options)) {}

std::string HttpChatBackend::complete(const std::string& model_id, const std::string& prompt) {
  const auto endpoint = util::split_endpoint(options_.endpoint);
  httplib::Client client(endpoint.origin);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(options_.timeout).count();
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(options_.timeout).count() % 1000000;
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);

  httplib::Headers headers;
  if (!options_.credential_env.empty()) {
    const char* key = std::getenv(options_.credential_env.c_str());
    if (!key || !*key) {
      throw Error(ErrorCode::kBackendError, "credential variable " + options_.credential_env + " is not set");
    }
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }
  nlohmann::json body = {
      {"model", model_id},
      {"temperature", options_.temperature},
      {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt}}})},
  };
  const std::string payload = body.dump();
  const std::string path = endpoint.path_prefix + "/chat/completions";

  auto backoff = options_.initial_backoff;
  std::string last_error;
  for (int attempt = 0; attempt <= options_.max_retries; ++attempt) {
    if (attempt > 0) {
      spdlog::warn("chat backend retry {}/{} after: {}", attempt, options_.max_retries, last_error);
      std::this_thread::sleep_for(backoff);
      backoff *= 2;
    }
    auto res = client.Post(path, headers, payload, "application/json");
    if (!res) {
      last_error = httplib::to_string(res.error());
      continue;
    }
    if (res->status == 429 || res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200) {
      throw Error(ErrorCode::kBackendError, "HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200));
    }
    auto reply = nlohmann::json::parse(res->body, nullptr, false);
    try {
      return reply.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception&) {
      throw Error(ErrorCode::kBackendError, "unexpected completion shape");
    }
  }
  throw Error(ErrorCode::kBackendError, "giving up after retries: " + last_error);
}

}  // namespace soapbench
