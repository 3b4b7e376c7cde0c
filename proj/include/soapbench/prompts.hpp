#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "soapbench/note.hpp"

namespace soapbench {

enum class PromptKind {
  kTop4Concordance,
  kTop1Concordance,
  kTreatmentPlan,
  kCss,
  // Screens the machine note alone for diagnoses or treatments that its
  // subjective content does not support. Not one of the four adjudication
  // prompts; disabled unless explicitly enabled.
  kHallucinationScreen,
};

inline constexpr std::array kAdjudicationKinds = {PromptKind::kTop4Concordance,
                                                  PromptKind::kTop1Concordance,
                                                  PromptKind::kTreatmentPlan, PromptKind::kCss};

/// Short names used in files and on the command line: top4, top1, plan, css,
/// hallucination.
std::string_view to_string(PromptKind kind);
std::optional<PromptKind> prompt_kind_from_string(std::string_view name);

bool is_binary(PromptKind kind);

enum class BlindOrder { kMachineFirst, kClinicianFirst };

std::string_view to_string(BlindOrder order);

struct BlindingMap {
  std::string encounter_id;
  std::uint32_t run_index = 0;
  BlindOrder order = BlindOrder::kMachineFirst;
  std::uint64_t seed = 0;

  bool operator==(const BlindingMap&) const = default;
};

/// Order is a pure function of (seed, encounter_id, run_index).
BlindingMap make_blinding(std::uint64_t seed, std::string_view encounter_id, std::uint32_t run_index);

/// The instruction text for `kind`, without the note block.
std::string_view prompt_template(PromptKind kind);

/// Template, a blank line, then the notes labelled "SOAP NOTE A" and
/// "SOAP NOTE B" in blinding order. Throws kEmptyNote if either note is blank.
std::string render_prompt(PromptKind kind, const EncounterPair& pair, const BlindingMap& blinding);

}  // namespace soapbench
