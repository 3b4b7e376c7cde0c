#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace soapbench {

enum class Author { kMachine, kClinician };

std::string_view to_string(Author author);

enum class SectionKind { kSubjective, kObjective, kAssessment, kPlan };

inline constexpr SectionKind kSectionOrder[] = {SectionKind::kSubjective, SectionKind::kObjective,
                                                SectionKind::kAssessment, SectionKind::kPlan};

std::string_view to_string(SectionKind kind);
/// "Subjective:", "Objective:", "Assessment:", "Plan:".
std::string_view canonical_header(SectionKind kind);

enum class NoteWarning {
  kNoAssessment,
  kFewDiagnoses,  // machine note with fewer than four differential entries
};

std::string_view to_string(NoteWarning warning);

/// Byte range into SoapNote::raw_text.
struct TextSpan {
  std::size_t offset = 0;
  std::size_t length = 0;

  std::size_t end() const noexcept { return offset + length; }
  bool operator==(const TextSpan&) const = default;
};

// One recognized header and the text it governs. Blocks tile raw_text in
// document order after the preamble.
struct SectionBlock {
  SectionKind kind;
  TextSpan header;
  TextSpan body;

  bool operator==(const SectionBlock&) const = default;
};

struct SoapNote {
  std::string note_id;
  Author author = Author::kMachine;
  std::string raw_text;
  std::map<SectionKind, std::string> sections;
  std::vector<std::string> diagnoses;  // diagnoses[0] is the primary
  std::string plan_text;
  TextSpan preamble;
  std::vector<SectionBlock> blocks;
  std::vector<NoteWarning> warnings;

  bool has_section(SectionKind kind) const { return sections.contains(kind); }
  bool has_warning(NoteWarning w) const;
  std::string_view text_of(TextSpan span) const {
    return std::string_view(raw_text).substr(span.offset, span.length);
  }

  bool operator==(const SoapNote&) const = default;
};

/// Parses SOAP-structured text. Throws Error(kEmptyNote) on blank input; a
/// missing assessment is reported through NoteWarning::kNoAssessment.
SoapNote parse_soap(std::string_view raw_text, Author author, std::string note_id = {});

/// Re-renders the note with canonical headers in S, O, A, P order. Every
/// section body appears verbatim.
std::string render_canonical(const SoapNote& note);

struct EncounterPair {
  std::string encounter_id;
  SoapNote machine_note;
  SoapNote clinician_note;
  std::map<std::string, std::string> metadata;
};

struct Exclusion {
  std::size_t line = 0;  // 1-based line in the source file
  std::string encounter_id;
  std::string reason;
};

struct Corpus {
  std::vector<EncounterPair> pairs;
  std::string source_path;
  std::vector<Exclusion> exclusions;

  const EncounterPair* find(std::string_view encounter_id) const;
};

/// Parses one pair-record line. Returns the pair or the exclusion reason.
struct RecordResult {
  std::optional<EncounterPair> pair;
  std::string encounter_id;
  std::string reason;
};
RecordResult parse_pair_record(std::string_view line);

/// Loads a JSON-lines pair-record file, applying the exclusion rules.
Corpus load_corpus(const std::filesystem::path& path);

/// Builds a corpus from in-memory pairs with the same exclusion rules.
Corpus make_corpus(std::vector<EncounterPair> pairs, std::string source = "<memory>");

/// Writes the exclusion log as JSON lines {encounter_id, reason}.
void write_exclusion_log(const Corpus& corpus, const std::filesystem::path& path);

}  // namespace soapbench
