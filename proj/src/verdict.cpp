#include "soapbench/verdict.hpp"

#include <cctype>

#include "soapbench/error.hpp"
#include "soapbench/util/text.hpp"

namespace soapbench {

std::string_view to_string(BinaryOutcome outcome) {
  switch (outcome) {
    case BinaryOutcome::kConcordant: return "concordant";
    case BinaryOutcome::kNotConcordant: return "not_concordant";
    case BinaryOutcome::kUnparseable: return "unparseable";
  }
  return "?";
}

namespace {

BinaryOutcome outcome_from_string(std::string_view s) {
  if (s == "concordant") return BinaryOutcome::kConcordant;
  if (s == "not_concordant") return BinaryOutcome::kNotConcordant;
  if (s == "unparseable") return BinaryOutcome::kUnparseable;
  throw Error(ErrorCode::kMalformedRecord, "unknown outcome '" + std::string(s) + "'");
}

}  // namespace

BinaryOutcome parse_binary_verdict(std::string_view raw) {
  const auto text = util::trim(raw);
  const bool yes = text.find("<001>") != std::string_view::npos;
  const bool no = text.find("<000>") != std::string_view::npos;
  if (yes == no) return BinaryOutcome::kUnparseable;
  return yes ? BinaryOutcome::kConcordant : BinaryOutcome::kNotConcordant;
}

namespace {

// Drops markdown emphasis and surrounding whitespace.
std::string_view clean(std::string_view s) {
  s = util::trim(s);
  while (!s.empty() && (s.front() == '*' || s.front() == '_')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == '*' || s.back() == '_')) s.remove_suffix(1);
  return util::trim(s);
}

std::string normalize_key(std::string_view key) {
  std::string out;
  for (char c : clean(key)) {
    if (std::isalpha(static_cast<unsigned char>(c))) out.push_back(util::ascii_lower(c));
  }
  return out;
}

[[noreturn]] void fail(const std::string& why) { throw Error(ErrorCode::kCssParseFailure, why); }

int parse_score(std::string_view value, std::string_view field) {
  value = clean(value);
  if (const auto slash = value.find('/'); slash != std::string_view::npos) {
    const auto denom = util::trim(value.substr(slash + 1));
    if (denom != "10") fail(std::string(field) + ": expected a score out of 10");
    value = util::trim(value.substr(0, slash));
  }
  if (value.empty() || value.size() > 3) fail(std::string(field) + ": missing score");
  int n = 0;
  for (char c : value) {
    if (!std::isdigit(static_cast<unsigned char>(c))) fail(std::string(field) + ": not an integer");
    n = n * 10 + (c - '0');
  }
  if (n < 0 || n > 10) fail(std::string(field) + ": " + std::to_string(n) + " outside 0..10");
  return n;
}

bool parse_yes_no(std::string_view value) {
  const auto v = util::to_lower(clean(value));
  if (v.starts_with("yes")) return true;
  if (v.starts_with("no")) return false;
  fail("co-morbidity: expected Yes or No");
}

std::string parse_label(std::string_view value) {
  auto v = clean(value);
  while (!v.empty() && (v.back() == '.' || util::is_space(v.back()))) v.remove_suffix(1);
  if (v.size() >= 2 && v.front() == '[' && v.back() == ']') v = util::trim(v.substr(1, v.size() - 2));
  return std::string(v);
}

struct Header {
  std::optional<int> similarity;
  std::optional<int> complexity;
  std::optional<bool> comorbidity;
  std::optional<std::string> icd;
};

std::optional<Header> parse_header_line(std::string_view line) {
  if (line.find('|') == std::string_view::npos) return std::nullopt;
  Header h;
  bool any_key = false;
  for (const auto& field : util::split(line, '|')) {
    const auto colon = field.find(':');
    if (colon == std::string::npos) continue;
    const auto key = normalize_key(std::string_view(field).substr(0, colon));
    const auto value = std::string_view(field).substr(colon + 1);
    if (key == "similarity") {
      h.similarity = parse_score(value, "similarity");
      any_key = true;
    } else if (key == "complexity") {
      h.complexity = parse_score(value, "complexity");
      any_key = true;
    } else if (key == "comorbidity") {
      h.comorbidity = parse_yes_no(value);
      any_key = true;
    } else if (key == "icd") {
      h.icd = parse_label(value);
      any_key = true;
    }
  }
  if (!any_key || !h.similarity) return std::nullopt;
  return h;
}

}  // namespace

CssRecord parse_css(std::string_view raw, std::vector<std::string>* warnings) {
  std::optional<Header> header;
  std::optional<std::string> difference;
  for (const auto& line : util::split(raw, '\n')) {
    const auto trimmed = clean(line);
    if (!header) {
      if (auto h = parse_header_line(trimmed)) {
        header = std::move(h);
        continue;
      }
    }
    if (!difference && util::istarts_with(trimmed, "difference")) {
      const auto colon = trimmed.find(':');
      if (colon != std::string_view::npos && normalize_key(trimmed.substr(0, colon)) == "difference") {
        difference = std::string(clean(trimmed.substr(colon + 1)));
      }
    }
  }
  if (!header) fail("no 'Similarity: X/10 | ...' header line");
  if (!header->complexity) fail("complexity missing");
  if (!header->comorbidity) fail("co-morbidity missing");
  if (!header->icd || header->icd->empty()) fail("ICD label missing");

  CssRecord rec;
  rec.similarity = *header->similarity;
  rec.complexity = *header->complexity;
  rec.comorbidity = *header->comorbidity;
  rec.icd_label = *header->icd;
  if (difference) {
    rec.difference = *difference;
  } else if (warnings) {
    warnings->push_back("CSS response has no Difference line");
  }
  return rec;
}

nlohmann::ordered_json to_json(const CssRecord& css) {
  nlohmann::ordered_json j;
  j["similarity"] = css.similarity;
  j["complexity"] = css.complexity;
  j["comorbidity"] = css.comorbidity;
  j["icd_label"] = css.icd_label;
  j["difference"] = css.difference;
  return j;
}

CssRecord css_from_json(const nlohmann::json& j) {
  CssRecord css;
  css.similarity = j.at("similarity").get<int>();
  css.complexity = j.at("complexity").get<int>();
  css.comorbidity = j.at("comorbidity").get<bool>();
  css.icd_label = j.at("icd_label").get<std::string>();
  css.difference = j.value("difference", "");
  if (css.similarity < 0 || css.similarity > 10 || css.complexity < 0 || css.complexity > 10 ||
      css.icd_label.empty()) {
    throw Error(ErrorCode::kMalformedRecord, "CSS record out of range");
  }
  return css;
}

bool JudgeVerdict::usable() const noexcept {
  if (backend_failed()) return false;
  if (prompt_kind == PromptKind::kCss) return css.has_value();
  return outcome && *outcome != BinaryOutcome::kUnparseable;
}

nlohmann::ordered_json to_json(const JudgeVerdict& v, bool include_latency) {
  nlohmann::ordered_json j;
  j["encounter_id"] = v.encounter_id;
  j["prompt_kind"] = std::string(to_string(v.prompt_kind));
  j["run_index"] = v.run_index;
  j["attempt"] = v.attempt;
  if (v.outcome) j["outcome"] = std::string(to_string(*v.outcome));
  if (v.css) j["css"] = to_json(*v.css);
  j["raw_response"] = v.raw_response;
  j["blinding"] = {{"order", std::string(to_string(v.blinding.order))}, {"seed", v.blinding.seed}};
  if (include_latency) j["latency_ms"] = v.latency_ms;
  j["model_id"] = v.model_id;
  if (!v.error.empty()) j["error"] = v.error;
  return j;
}

JudgeVerdict verdict_from_json(const nlohmann::json& j) {
  JudgeVerdict v;
  v.encounter_id = j.at("encounter_id").get<std::string>();
  const auto kind = prompt_kind_from_string(j.at("prompt_kind").get<std::string>());
  if (!kind) throw Error(ErrorCode::kMalformedRecord, "unknown prompt kind");
  v.prompt_kind = *kind;
  v.run_index = j.at("run_index").get<std::uint32_t>();
  v.attempt = j.value("attempt", 0U);
  if (j.contains("outcome")) v.outcome = outcome_from_string(j["outcome"].get<std::string>());
  if (j.contains("css")) v.css = css_from_json(j["css"]);
  v.raw_response = j.value("raw_response", "");
  const auto& b = j.at("blinding");
  v.blinding.encounter_id = v.encounter_id;
  v.blinding.run_index = v.run_index;
  v.blinding.seed = b.at("seed").get<std::uint64_t>();
  v.blinding.order = b.at("order").get<std::string>() == "clinician_first" ? BlindOrder::kClinicianFirst
                                                                           : BlindOrder::kMachineFirst;
  v.latency_ms = j.value("latency_ms", std::int64_t{0});
  v.model_id = j.value("model_id", "");
  v.error = j.value("error", "");
  return v;
}

}  // namespace soapbench
