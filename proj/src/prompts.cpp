#include "soapbench/prompts.hpp"

#include "soapbench/error.hpp"
#include "soapbench/util/hash.hpp"
#include "soapbench/util/text.hpp"

namespace soapbench {

namespace {

// Adjudication templates, verbatim.
constexpr std::string_view kTop4Template = R"PROMPT(Your Role

You are an LLM that functions as a clinical evaluation assistant tasked with comparing diagnoses located within two SOAP notes. I want you to determine if any of the diagnoses from one SOAP note match or are clinically consistent with any of the diagnoses from the other note. For example, if one note has 4 diagnosis, and the other note has 1 diagnosis, determine if any of the 4 diagnoses from one SOAP note match or are consistent with the 1 diagnosis from the other SOAP note.

To complete the task, follow these steps.

1. Read both SOAP notes
2. Identify the listed diagnosis in each SOAP note. For this task, only use explicitly stated diagnosis. Diagnoses are only found in the assessment section of the SOAP note.
3. Compare all of the diagnosis from one SOAP note to all of the diagnosis in the other SOAP note.
4. Determine if 1 or more diagnosis from one note matches or is clinically consistent with 1 or more diagnosis from the other note.

Evaluation Criteria

The diagnoses are considered to be “clinically consistent” if:

1. The primary diagnosis from one note is the same as or clinically similar to at least one of the diagnoses (primary or secondary) in the other note.
2. A diagnosis from one SOAP note is a more specific subtype of any diagnosis in the other SOAP note. For example, a diagnosis of “Lower Back Pain” in one SOAP note would be clinically consistent with a diagnosis of “Sciatica” in another SOAP note.
3. The diagnoses, while using different terminology, refer to the same underlying clinical condition. For example, a diagnosis of “Eczema” in one SOAP note would be clinically consistent with a diagnosis of “Atopic Dermatitis” in another SOAP note.
4. The diagnoses are overlapping conditions in the same body system with different wording (e.g., “Sinusitis” vs. “Allergic Rhinitis with Sinusitis”)
5. One diagnosis is directly related to or a complication of another diagnosis. (e.g., “gallstones” vs. “cholecystitis” or “leg swelling” vs. “deep vein thrombosis”).

Examples of Inconsistent Diagnoses

- Completely different body systems without clear connection (e.g., “migraine” vs. “plantar fasciitis”)
- Contradictory diagnoses for the same symptoms (e.g., “viral pneumonia” vs. “congestive heart failure” for the same presentation)
- Diagnoses that would lead to fundamentally different treatment approaches

Output Format

- If the SOAP notes are clinically consistent respond with this exact phrase: <001>
- If the SOAP notes are NOT clinically consistent respond with this exact phrase: <000>
- You must respond with only the code.

Remember that your goal is to evaluate if the notes would lead to similar clinical treatment approaches, not whether they are identical in every detail.)PROMPT";

constexpr std::string_view kTop1Template = R"PROMPT(Your Role

You are an LLM that functions as a clinical evaluation assistant tasked with comparing diagnoses located within two SOAP notes. I want you to determine if the primary diagnosis from one SOAP note matches or is clinically consistent to the primary diagnoses from the other note.

To complete the task, follow these steps.

1. Read both SOAP notes.
2. Identify the listed diagnosis in each SOAP note. For this task, only use explicitly stated diagnosis. Diagnoses are only found in the assessment section of the SOAP note.
3. Compare all of the diagnosis from one SOAP note to all of the diagnosis in the other SOAP note.
4. Determine if the primary or top diagnosis from one note matches or is clinically consistent with the primary diagnosis from the other note.

The diagnoses are considered to be “clinically consistent” if:

1. The primary diagnosis from one note is the same as or clinically similar to the primary diagnoses in the other note
2. The primary diagnosis from one SOAP note is a more specific subtype of the primary diagnosis in the other SOAP note. For example, a diagnosis of “Lower Back Pain” in one SOAP note would be clinically consistent with a diagnosis of “Sciatica” in another SOAP note.
3. The primary diagnoses, while using different terminology, refer to the same underlying clinical condition. For example, a diagnosis of “Eczema” in one SOAP note would be clinically consistent with a diagnosis of “Atopic Dermatitis” in another SOAP note.
4. The primary diagnoses are overlapping conditions in the same body system with different wording (e.g., “Sinusitis” vs. “Allergic Rhinitis with Sinusitis”)
5. One diagnosis is directly related to or a complication of another diagnosis. (e.g., “gallstones” vs. “cholecystitis” or “leg swelling” vs. “DVT”)

Examples of Inconsistent Diagnoses

- Completely different body systems without clear connection (e.g., “Migraine” vs. “Plantar Fasciitis”)
- Contradictory diagnoses for the same symptoms (e.g., “Viral Pneumonia” vs. “Congestive Heart Failure” for the same presentation)
- Diagnoses that would lead to fundamentally different treatment approaches

Output Format

- If the SOAP notes are clinically consistent respond with this exact phrase <001>
- If the SOAP notes are NOT clinically consistent respond with this exact phrase <000>
- You must respond with only the code.

Remember that your goal is to evaluate if the notes would lead to similar clinical treatment approaches, not whether they are identical in every detail.)PROMPT";

constexpr std::string_view kPlanTemplate = R"PROMPT(Your Role

You are a clinical evaluation assistant tasked with comparing treatment plans between two SOAP notes to determine if they are clinically consistent with each other. Your job is to carefully analyze both treatment approaches and determine whether they represent compatible clinical management strategies that would lead to similar therapeutic outcomes. For the purposes of this comparison the treatment plan is usually contained in the final section of the SOAP note. Treatment plans can include, confirmation tests and imaging studies, medications, procedures, home care or ancillary services such as physical therapy.

Evaluation Criteria

Two SOAP notes are considered to have **clinically consistent treatment plans** if:

1. The core therapeutic approach is similar (e.g., both recommend physical therapy, medication management, or surgical intervention).
2. One treatment plan recommends a test or imaging study to confirm the diagnosis prior to treatment and the other does not, but they both agree on the final treatment approach.
3. The specific interventions, while possibly different in details, address the same underlying clinical needs.
4. The treatment modalities are recognized alternatives for the same condition.
5. One plan includes all key elements of the other plan plus additional elements (more comprehensive but includes the same core approach).
6. One note has very limited treatment plans such as a phrase or one sentence and the other has a longer treatment plan, but they both provide similar treatment approaches.

Examples of Consistent Treatment Plans

- Similar medication classes with different specific drugs (e.g., “Ibuprofen 600 mg three times a day” vs. “Naproxen 500 mg twice a day”; both are nonsteroidal anti-inflammatory drugs (NSAIDs)).
- Equivalent physical interventions (e.g., “Physical therapy focusing on lumbar strengthening” vs. “Home exercise program for core strengthening”).
- Stepped care approaches covering the same therapies (e.g., “Try heat therapy, then NSAID, then consider PT referral” vs. “PT 2x weekly with home heat application and as-needed NSAID”).
- Similar monitoring approaches (e.g., “Follow-up in 4 weeks with blood pressure log” vs. “Monitor blood pressure daily and return in 1 month for reassessment”).

Examples of Inconsistent Treatment Plans

- Plans requiring fundamentally different approaches (e.g., “conservative management with NSAIDs” vs. “immediate surgical intervention”).
- Contradictory interventions (e.g., “strict bed rest for 72 hours” vs. “maintain normal activity levels and avoid rest”).
- Treatment plans addressing entirely different therapeutic goals.
- One plan recommending critical interventions that are explicitly avoided in the other plan.

Analysis Process

1. Extract all treatment elements from both SOAP note.
2. Categorize treatments by type (e.g., medications, physical therapies, procedures, lifestyle modifications, follow-up).
3. Compare similar categories across both notes.
4. Determine whether the core therapeutic approach is preserved between notes.
5. Determine whether any critical contradictions exist between the plans.

6. Provide your reasoning, citing specific therapeutic relationships.

Output Format

- Begin with a side-by-side comparison of all diagnoses from both notes.
- If the SOAP notes treatment plans are clinically consistent, respond with this exact phrase: <001>.
- If the SOAP notes treatment plans are NOT clinically consistent, respond with this exact phrase: <000>.
- You must respond with only the code.

Remember that your goal is to evaluate whether the treatment plans would lead to similar therapeutic outcomes, not whether they are identical in every detail. Treatment plans may vary in specific medications, dosages, or techniques while still maintaining consistency in the overall therapeutic approach.)PROMPT";

constexpr std::string_view kCssTemplate = R"PROMPT(Your Role

You are a clinical documentation reviewer. Your task is to compare two SOAP notes—one generated by Doctronic and the other by a human clinician—and evaluate them based on the following four criteria. Provide your output in following formats:

Similarity: X/10 | Complexity: Y/10 | Co-morbidity: Yes/No | ICD: [Main Clinical Condition]

Difference: One sentence summarizing the key clinical or documentation difference between the two notes

Scoring Criteria

1. Similarity: Rate how similarly a physician would understand the patient's condition from both SOAP notes.
 - 10: Nearly identical in clinical impression and documentation.
 - 7-9: Clinically very aligned with minor phrasing or detail differences.
 - 4-6: Moderate differences in emphasis, phrasing, or included symptoms.
 - 1-3: Major differences in clinical interpretation or diagnostic focus.
 - 0: Completely different clinical portrayals.
2. Complexity: Rate the medical complexity of the case.
 - 0-2: Very common and simple conditions (e.g., seasonal flu, tension headache).
 - 3-5: Mild-to-moderate complexity (e.g., hypertension with lifestyle considerations).
 - 6-8: Significant complexity or multi-system involvement (e.g., type 1 diabetes, chronic obstructive pulmonary disease).
 - 9-10: Rare, severe, or highly specialized conditions (e.g., polymyositis, amyotrophic lateral sclerosis).
3. Co-morbidity
 - Indicate whether the patient has one or more additional chronic or acute conditions that are clinically relevant to the case.
 - ICD condition: Identify the main diagnosis using ICD-compatible terminology (e.g., "Acute Sinusitis", not "sinus infection" or ICD-10 code).

Output Format Example

Similarity: 8/10 | Complexity: 3/10 | Co-morbidity: No | ICD: acute viral rhinitis.

Difference: Doctronic's note emphasized upper respiratory symptoms, while the human clinician highlighted general fatigue without mention of nasal congestion.

Instructions

Read both SOAP notes thoroughly. Focus on capturing the core clinical impression of each note and then assess the extent to which the diagnostic and management reasoning in the two notes align. Use the similarity score to quantify alignment, the complexity score to characterize clinical difficulty, and co-morbidity to flag additional medical conditions. Summarize the main diagnosis using standard ICD-compatible language, and finally, articulate the key clinical or stylistic difference in one sentence.)PROMPT";

constexpr std::string_view kHallucinationTemplate = R"PROMPT(Your Role

You are a clinical documentation auditor. You will be given a single SOAP note. Determine whether every diagnosis in the assessment section and every treatment in the plan section is supported by the information documented in the subjective and objective sections of the same note.

A diagnosis or treatment is "unsupported" if it relies on symptoms, findings, history, or test results that the note never documents, or if it contradicts what the note documents. Listing a reasonable differential diagnosis that follows from the documented symptoms is not unsupported.

Output Format

- If every diagnosis and treatment is supported by the note, respond with this exact phrase: <001>
- If any diagnosis or treatment is unsupported by the note, respond with this exact phrase: <000>
- You must respond with only the code.)PROMPT";

void append_note_block(std::string& out, std::string_view label, std::string_view text) {
  out += "----- BEGIN ";
  out += label;
  out += " -----\n";
  out += text;
  if (text.empty() || text.back() != '\n') out += '\n';
  out += "----- END ";
  out += label;
  out += " -----\n";
}

}  // namespace

std::string_view to_string(PromptKind kind) {
  switch (kind) {
    case PromptKind::kTop4Concordance: return "top4";
    case PromptKind::kTop1Concordance: return "top1";
    case PromptKind::kTreatmentPlan: return "plan";
    case PromptKind::kCss: return "css";
    case PromptKind::kHallucinationScreen: return "hallucination";
  }
  return "?";
}

std::optional<PromptKind> prompt_kind_from_string(std::string_view name) {
  for (auto kind : {PromptKind::kTop4Concordance, PromptKind::kTop1Concordance,
                    PromptKind::kTreatmentPlan, PromptKind::kCss, PromptKind::kHallucinationScreen}) {
    if (util::iequals(name, to_string(kind))) return kind;
  }
  return std::nullopt;
}

bool is_binary(PromptKind kind) { return kind != PromptKind::kCss; }

std::string_view to_string(BlindOrder order) {
  return order == BlindOrder::kMachineFirst ? "machine_first" : "clinician_first";
}

BlindingMap make_blinding(std::uint64_t seed, std::string_view encounter_id, std::uint32_t run_index) {
  const std::uint64_t mixed =
      util::splitmix64(seed ^ util::fnv1a64(encounter_id) ^ util::splitmix64(run_index + 1ULL));
  BlindingMap map;
  map.encounter_id = std::string(encounter_id);
  map.run_index = run_index;
  map.seed = seed;
  map.order = (mixed & 1U) ? BlindOrder::kClinicianFirst : BlindOrder::kMachineFirst;
  return map;
}

std::string_view prompt_template(PromptKind kind) {
  switch (kind) {
    case PromptKind::kTop4Concordance: return kTop4Template;
    case PromptKind::kTop1Concordance: return kTop1Template;
    case PromptKind::kTreatmentPlan: return kPlanTemplate;
    case PromptKind::kCss: return kCssTemplate;
    case PromptKind::kHallucinationScreen: return kHallucinationTemplate;
  }
  return {};
}

std::string render_prompt(PromptKind kind, const EncounterPair& pair, const BlindingMap& blinding) {
  const std::string_view machine = pair.machine_note.raw_text;
  const std::string_view clinician = pair.clinician_note.raw_text;
  if (util::trim(machine).empty() || util::trim(clinician).empty()) {
    throw Error(ErrorCode::kEmptyNote, pair.encounter_id + ": cannot render a prompt for a blank note");
  }
  const auto tmpl = prompt_template(kind);
  std::string out;
  out.reserve(tmpl.size() + machine.size() + clinician.size() + 160);
  out += tmpl;
  out += "\n\n";
  if (kind == PromptKind::kHallucinationScreen) {
    append_note_block(out, "SOAP NOTE", machine);
    return out;
  }
  const bool machine_first = blinding.order == BlindOrder::kMachineFirst;
  append_note_block(out, "SOAP NOTE A", machine_first ? machine : clinician);
  out += '\n';
  append_note_block(out, "SOAP NOTE B", machine_first ? clinician : machine);
  return out;
}

}  // namespace soapbench
