#include "soapbench/note.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <set>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "soapbench/error.hpp"
#include "soapbench/util/append_log.hpp"
#include "soapbench/util/text.hpp"

namespace soapbench {

using util::is_space;

std::string_view to_string(Author author) {
  return author == Author::kMachine ? "machine" : "clinician";
}

std::string_view to_string(SectionKind kind) {
  switch (kind) {
    case SectionKind::kSubjective: return "subjective";
    case SectionKind::kObjective: return "objective";
    case SectionKind::kAssessment: return "assessment";
    case SectionKind::kPlan: return "plan";
  }
  return "?";
}

std::string_view canonical_header(SectionKind kind) {
  switch (kind) {
    case SectionKind::kSubjective: return "Subjective:";
    case SectionKind::kObjective: return "Objective:";
    case SectionKind::kAssessment: return "Assessment:";
    case SectionKind::kPlan: return "Plan:";
  }
  return "";
}

std::string_view to_string(NoteWarning warning) {
  return warning == NoteWarning::kNoAssessment ? "NoAssessment" : "FewDiagnoses";
}

bool SoapNote::has_warning(NoteWarning w) const {
  return std::find(warnings.begin(), warnings.end(), w) != warnings.end();
}

namespace {

struct Alias {
  std::string_view text;
  SectionKind kind;
};

// Longest first so multi-word aliases win over their prefixes.
constexpr std::array kAliases = {
    Alias{"pertinent past medical/surgical history", SectionKind::kSubjective},
    Alias{"history of present illness", SectionKind::kSubjective},
    Alias{"differential diagnosis", SectionKind::kAssessment},
    Alias{"assessment and plan", SectionKind::kAssessment},
    Alias{"physical examination", SectionKind::kObjective},
    Alias{"past medical history", SectionKind::kSubjective},
    Alias{"assessment/plan", SectionKind::kAssessment},
    Alias{"treatment plan", SectionKind::kPlan},
    Alias{"physical exam", SectionKind::kObjective},
    Alias{"examination", SectionKind::kObjective},
    Alias{"assessment", SectionKind::kAssessment},
    Alias{"subjective", SectionKind::kSubjective},
    Alias{"impression", SectionKind::kAssessment},
    Alias{"objective", SectionKind::kObjective},
    Alias{"diagnoses", SectionKind::kAssessment},
    Alias{"diagnosis", SectionKind::kAssessment},
    Alias{"exam", SectionKind::kObjective},
    Alias{"plan", SectionKind::kPlan},
    Alias{"hpi", SectionKind::kSubjective},
    Alias{"pmh", SectionKind::kSubjective},
    Alias{"psh", SectionKind::kSubjective},
};

bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

// Skips a simple markup tag such as <p>, </p> or <u>.
std::size_t skip_tag(std::string_view line, std::size_t i) {
  if (i >= line.size() || line[i] != '<') return i;
  const auto close = line.find('>', i);
  if (close == std::string_view::npos || close - i > 40) return i;
  for (std::size_t k = i + 1; k < close; ++k) {
    if (line[k] == '<') return i;
  }
  return close + 1;
}

std::size_t skip_decorations(std::string_view line, std::size_t i, bool allow_space) {
  for (;;) {
    if (i >= line.size()) return i;
    const char c = line[i];
    if (c == '*' || c == '_' || c == '#' || (allow_space && (c == ' ' || c == '\t'))) {
      ++i;
      continue;
    }
    const auto after_tag = skip_tag(line, i);
    if (after_tag != i) {
      i = after_tag;
      continue;
    }
    return i;
  }
}

bool only_decorations(std::string_view s) {
  return skip_decorations(s, 0, true) == s.size() || util::trim(s).empty();
}

struct HeaderMatch {
  SectionKind kind;
  std::size_t begin;  // relative to the scanned text
  std::size_t end;
};

const Alias* match_alias(std::string_view text, std::size_t at) {
  for (const auto& alias : kAliases) {
    const auto rest = text.substr(at);
    if (!util::istarts_with(rest, alias.text)) continue;
    const auto after = at + alias.text.size();
    if (after < text.size() && is_alnum(text[after])) continue;
    return &alias;
  }
  return nullptr;
}

bool all_upper(std::string_view s) {
  bool any_letter = false;
  for (char c : s) {
    if (std::islower(static_cast<unsigned char>(c))) return false;
    if (std::isupper(static_cast<unsigned char>(c))) any_letter = true;
  }
  return any_letter;
}

// A header sits at the start of a line: optional markup, an alias, optional
// markup, then a colon, the end of the line, or (for ALL-CAPS labels such as
// "EXAM") a space before the body.
std::optional<HeaderMatch> match_line_header(std::string_view line) {
  std::size_t i = 0;
  while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
  i = skip_decorations(line, i, false);
  const Alias* alias = match_alias(line, i);
  if (!alias) return std::nullopt;
  const std::string_view alias_raw = line.substr(i, alias->text.size());
  std::size_t j = skip_decorations(line, i + alias->text.size(), false);
  std::size_t end = j;
  std::size_t k = j;
  while (k < line.size() && (line[k] == ' ' || line[k] == '\t')) ++k;
  bool colon = false;
  if (k < line.size() && line[k] == ':') {
    colon = true;
    end = skip_decorations(line, k + 1, false);
  }
  const bool rest_empty = only_decorations(line.substr(end));
  if (!colon && !rest_empty && !(alias_raw.size() >= 3 && all_upper(alias_raw))) {
    return std::nullopt;
  }
  return HeaderMatch{alias->kind, 0, end};
}

// "Assessment:" / "Plan:" occurring mid-line, for notes whose sections run
// together on one line.
std::vector<HeaderMatch> find_inline_headers(std::string_view text, std::size_t from) {
  std::vector<HeaderMatch> found;
  bool seen_assessment = false;
  for (std::size_t i = from; i < text.size(); ++i) {
    if (i > 0 && is_alnum(text[i - 1])) continue;
    const Alias* alias = match_alias(text, i);
    if (!alias) continue;
    if (alias->kind != SectionKind::kAssessment && alias->kind != SectionKind::kPlan) continue;
    if (alias->kind == SectionKind::kPlan && !seen_assessment) continue;
    std::size_t k = skip_decorations(text, i + alias->text.size(), false);
    if (k >= text.size() || text[k] != ':') continue;
    const auto end = skip_decorations(text, k + 1, false);
    found.push_back({alias->kind, i, end});
    if (alias->kind == SectionKind::kAssessment) seen_assessment = true;
    i = end - 1;
  }
  return found;
}

std::string strip_enumerator(std::string_view s) {
  for (;;) {
    s = util::trim(s);
    std::size_t i = 0;
    while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i;
    if (i > 0 && i < s.size() && (s[i] == '.' || s[i] == ')') &&
        (i + 1 == s.size() || is_space(s[i + 1]))) {
      s.remove_prefix(i + 1);
      continue;
    }
    if (!s.empty() && (s[0] == '-' || s[0] == '*') && (s.size() == 1 || is_space(s[1]))) {
      s.remove_prefix(1);
      continue;
    }
    if (s.starts_with("\xE2\x80\xA2")) {  // bullet
      s.remove_prefix(3);
      continue;
    }
    break;
  }
  // Bold or italic wrappers around the whole entry.
  while (s.size() >= 2 && (s.front() == '*' || s.front() == '_') && s.back() == s.front()) {
    s = util::trim(s.substr(1, s.size() - 2));
  }
  return std::string(s);
}

std::string initials(std::string_view s) {
  std::string out;
  bool in_word = false;
  for (char c : s) {
    if (is_alnum(c)) {
      if (!in_word) out.push_back(util::ascii_lower(c));
      in_word = true;
    } else {
      in_word = false;
    }
  }
  return out;
}

// "Urinary Tract Infection (UTI)" -> "Urinary Tract Infection"; a
// parenthetical that adds information ("Oral Candidiasis (Thrush)") stays.
std::string strip_duplicate_parenthetical(std::string entry) {
  const std::string_view view = util::trim(entry);
  if (view.empty() || view.back() != ')') return entry;
  const auto open = view.rfind('(');
  if (open == std::string_view::npos || open == 0) return entry;
  const auto head = util::trim(view.substr(0, open));
  const auto inner = util::trim(view.substr(open + 1, view.size() - open - 2));
  if (head.empty() || inner.empty()) return entry;
  if (util::iequals(head, inner) || util::to_lower(inner) == initials(head)) {
    return std::string(head);
  }
  return entry;
}

std::vector<std::string> split_diagnoses(std::string_view assessment) {
  std::vector<std::string> out;
  for (const auto& raw_line : util::split(assessment, '\n')) {
    auto entry = strip_enumerator(raw_line);
    if (entry.empty() || only_decorations(entry)) continue;
    out.push_back(strip_duplicate_parenthetical(std::move(entry)));
  }
  if (out.empty() && !util::trim(assessment).empty() && !only_decorations(assessment)) {
    out.emplace_back(util::trim(assessment));
  }
  return out;
}

}  // namespace

SoapNote parse_soap(std::string_view raw_text, Author author, std::string note_id) {
  if (util::trim(raw_text).empty()) throw Error(ErrorCode::kEmptyNote, "note text is blank");

  SoapNote note;
  note.note_id = std::move(note_id);
  note.author = author;
  note.raw_text = std::string(raw_text);
  const std::string_view text = note.raw_text;

  std::vector<HeaderMatch> headers;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (auto m = match_line_header(line)) headers.push_back({m->kind, pos, pos + m->end});
    pos = nl + 1;
  }

  const bool has_assessment_header = std::any_of(headers.begin(), headers.end(), [](const auto& h) {
    return h.kind == SectionKind::kAssessment;
  });
  if (!has_assessment_header) {
    for (const auto& m : find_inline_headers(text, 0)) {
      const bool overlaps = std::any_of(headers.begin(), headers.end(), [&](const auto& h) {
        return m.begin < h.end && h.begin < m.end;
      });
      if (!overlaps) headers.push_back(m);
    }
    std::sort(headers.begin(), headers.end(),
              [](const auto& a, const auto& b) { return a.begin < b.begin; });
  }

  note.preamble = {0, headers.empty() ? text.size() : headers.front().begin};
  for (std::size_t h = 0; h < headers.size(); ++h) {
    const auto body_end = h + 1 < headers.size() ? headers[h + 1].begin : text.size();
    note.blocks.push_back({headers[h].kind,
                           {headers[h].begin, headers[h].end - headers[h].begin},
                           {headers[h].end, body_end - headers[h].end}});
  }

  for (const auto& block : note.blocks) {
    auto body = std::string(util::trim(note.text_of(block.body)));
    auto [it, inserted] = note.sections.try_emplace(block.kind, body);
    if (!inserted && !body.empty()) {
      if (!it->second.empty()) it->second.push_back('\n');
      it->second += body;
    }
  }

  if (auto it = note.sections.find(SectionKind::kAssessment); it != note.sections.end()) {
    note.diagnoses = split_diagnoses(it->second);
  }
  if (auto it = note.sections.find(SectionKind::kPlan); it != note.sections.end()) {
    note.plan_text = it->second;
  }
  if (note.diagnoses.empty()) {
    note.warnings.push_back(NoteWarning::kNoAssessment);
  } else if (author == Author::kMachine && note.diagnoses.size() < 4) {
    note.warnings.push_back(NoteWarning::kFewDiagnoses);
  }
  return note;
}

std::string render_canonical(const SoapNote& note) {
  std::string out;
  for (const auto kind : kSectionOrder) {
    const auto it = note.sections.find(kind);
    if (it == note.sections.end()) continue;
    out += canonical_header(kind);
    out += '\n';
    out += it->second;
    out += '\n';
  }
  return out;
}

const EncounterPair* Corpus::find(std::string_view encounter_id) const {
  for (const auto& pair : pairs) {
    if (pair.encounter_id == encounter_id) return &pair;
  }
  return nullptr;
}

RecordResult parse_pair_record(std::string_view line) {
  RecordResult result;
  auto record = nlohmann::json::parse(line, nullptr, false);
  if (record.is_discarded() || !record.is_object()) {
    result.reason = "malformed record: not a JSON object";
    return result;
  }
  const auto id = record.find("encounter_id");
  if (id == record.end() || !id->is_string() || id->get<std::string>().empty()) {
    result.reason = "malformed record: encounter_id missing or not a string";
    return result;
  }
  result.encounter_id = id->get<std::string>();

  auto note_text = [&](const char* field) -> std::optional<std::string> {
    const auto f = record.find(field);
    if (f == record.end() || f->is_null()) return std::nullopt;
    if (!f->is_string()) return std::nullopt;
    auto s = f->get<std::string>();
    if (util::trim(s).empty()) return std::nullopt;
    return s;
  };
  for (const char* field : {"machine_note", "clinician_note"}) {
    const auto f = record.find(field);
    if (f != record.end() && !f->is_null() && !f->is_string()) {
      result.reason = std::string("malformed record: ") + field + " is not a string";
      return result;
    }
  }
  const auto machine = note_text("machine_note");
  const auto clinician = note_text("clinician_note");
  if (!machine || !clinician) {
    result.reason = "missing note";
    return result;
  }

  EncounterPair pair;
  pair.encounter_id = result.encounter_id;
  if (const auto meta = record.find("metadata"); meta != record.end() && !meta->is_null()) {
    if (!meta->is_object()) {
      result.reason = "malformed record: metadata is not an object";
      return result;
    }
    for (const auto& [key, value] : meta->items()) {
      pair.metadata[key] = value.is_string() ? value.get<std::string>() : value.dump();
    }
  }
  pair.machine_note = parse_soap(*machine, Author::kMachine, pair.encounter_id + "/machine");
  pair.clinician_note = parse_soap(*clinician, Author::kClinician, pair.encounter_id + "/clinician");
  result.pair = std::move(pair);
  return result;
}

namespace {

void admit(Corpus& corpus, std::set<std::string>& seen, RecordResult rec, std::size_t line_no) {
  if (!rec.pair) {
    spdlog::warn("excluding record at line {} ({}): {}", line_no,
                 rec.encounter_id.empty() ? "?" : rec.encounter_id, rec.reason);
    corpus.exclusions.push_back({line_no, rec.encounter_id, rec.reason});
    return;
  }
  if (!seen.insert(rec.encounter_id).second) {
    spdlog::warn("excluding duplicate encounter {} at line {}", rec.encounter_id, line_no);
    corpus.exclusions.push_back({line_no, rec.encounter_id, "duplicate"});
    return;
  }
  corpus.pairs.push_back(std::move(*rec.pair));
}

}  // namespace

Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot read corpus " + path.string());
  Corpus corpus;
  corpus.source_path = path.string();
  std::set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (util::trim(line).empty()) continue;
    admit(corpus, seen, parse_pair_record(line), line_no);
  }
  return corpus;
}

Corpus make_corpus(std::vector<EncounterPair> pairs, std::string source) {
  Corpus corpus;
  corpus.source_path = std::move(source);
  std::set<std::string> seen;
  std::size_t index = 0;
  for (auto& pair : pairs) {
    ++index;
    RecordResult rec;
    rec.encounter_id = pair.encounter_id;
    if (util::trim(pair.machine_note.raw_text).empty() ||
        util::trim(pair.clinician_note.raw_text).empty()) {
      rec.reason = "missing note";
    } else {
      rec.pair = std::move(pair);
    }
    admit(corpus, seen, std::move(rec), index);
  }
  return corpus;
}

void write_exclusion_log(const Corpus& corpus, const std::filesystem::path& path) {
  std::string out;
  for (const auto& ex : corpus.exclusions) {
    nlohmann::ordered_json j;
    j["encounter_id"] = ex.encounter_id;
    j["reason"] = ex.reason;
    j["line"] = ex.line;
    out += j.dump();
    out += '\n';
  }
  util::write_file_atomic(path, out);
}

}  // namespace soapbench
