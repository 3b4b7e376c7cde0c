#include "soapbench/consensus.hpp"

#include <algorithm>
#include <chrono>

#include <spdlog/spdlog.h>

#include "soapbench/error.hpp"
#include "soapbench/util/parallel.hpp"
#include "soapbench/util/text.hpp"

namespace soapbench {

void validate(const ConsensusConfig& config) {
  if (config.runs == 0 || config.runs % 2 == 0) {
    throw Error(ErrorCode::kConfigError, "consensus runs must be odd and >= 1, got " + std::to_string(config.runs));
  }
}

std::string_view to_string(Decision decision) {
  switch (decision) {
    case Decision::kConcordant: return "concordant";
    case Decision::kNotConcordant: return "not_concordant";
    case Decision::kIndeterminate: return "indeterminate";
    case Decision::kScored: return "scored";
  }
  return "?";
}

Decision decision_from_string(std::string_view s) {
  for (auto d : {Decision::kConcordant, Decision::kNotConcordant, Decision::kIndeterminate, Decision::kScored}) {
    if (s == to_string(d)) return d;
  }
  throw Error(ErrorCode::kMalformedRecord, "unknown decision '" + std::string(s) + "'");
}

Decision decide_binary(const VoteSplit& split, std::uint32_t runs) {
  const std::size_t parseable = split.concordant + split.not_concordant;
  if (parseable < quorum(runs)) return Decision::kIndeterminate;
  if (2 * split.concordant > parseable) return Decision::kConcordant;
  if (2 * split.not_concordant > parseable) return Decision::kNotConcordant;
  return Decision::kIndeterminate;
}

std::optional<CssRecord> aggregate_css(std::span<const CssRecord> records, std::uint32_t runs) {
  if (records.empty() || records.size() < quorum(runs)) return std::nullopt;
  auto lower_median = [&](auto field) {
    std::vector<int> values;
    for (const auto& r : records) values.push_back(r.*field);
    std::sort(values.begin(), values.end());
    return values[(values.size() - 1) / 2];
  };
  CssRecord out;
  out.similarity = lower_median(&CssRecord::similarity);
  out.complexity = lower_median(&CssRecord::complexity);
  const auto yes = std::count_if(records.begin(), records.end(), [](const auto& r) { return r.comorbidity; });
  out.comorbidity = static_cast<std::size_t>(2 * yes) > records.size();

  // Modal label; first occurrence wins ties and supplies the spelling.
  std::vector<std::pair<std::string, std::size_t>> tally;
  for (const auto& r : records) {
    const auto key = util::to_lower(util::trim(r.icd_label));
    auto it = std::find_if(tally.begin(), tally.end(), [&](const auto& t) { return t.first == key; });
    if (it == tally.end()) {
      tally.emplace_back(key, 1);
    } else {
      ++it->second;
    }
  }
  const auto best = std::max_element(tally.begin(), tally.end(),
                                     [](const auto& a, const auto& b) { return a.second < b.second; });
  for (const auto& r : records) {
    if (util::to_lower(util::trim(r.icd_label)) == best->first) {
      out.icd_label = std::string(util::trim(r.icd_label));
      out.difference = r.difference;
      break;
    }
  }
  return out;
}

namespace {

JudgeVerdict call_backend(const EncounterPair& pair, PromptKind kind, const BlindingMap& blinding,
                          std::uint32_t attempt, JudgeBackend& backend, const ConsensusConfig& config) {
  JudgeVerdict v;
  v.encounter_id = pair.encounter_id;
  v.prompt_kind = kind;
  v.run_index = blinding.run_index;
  v.attempt = attempt;
  v.blinding = blinding;
  v.model_id = config.model_id;

  const auto prompt = render_prompt(kind, pair, blinding);
  const auto start = std::chrono::steady_clock::now();
  try {
    v.raw_response = backend.complete(config.model_id, prompt);
  } catch (const std::exception& e) {
    v.error = e.what();
  }
  v.latency_ms = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start).count();

  if (kind == PromptKind::kCss) {
    if (!v.backend_failed()) {
      try {
        v.css = parse_css(v.raw_response);
      } catch (const Error& e) {
        spdlog::debug("{} css run {}: {}", pair.encounter_id, blinding.run_index, e.what());
      }
    }
  } else {
    v.outcome = v.backend_failed() ? BinaryOutcome::kUnparseable : parse_binary_verdict(v.raw_response);
  }
  return v;
}

}  // namespace

ConsensusResult run_consensus(const EncounterPair& pair, PromptKind kind, JudgeBackend& backend,
                              const ConsensusConfig& config, CheckpointStore* store) {
  validate(config);
  ConsensusResult result;
  result.encounter_id = pair.encounter_id;
  result.prompt_kind = kind;

  const std::uint32_t max_attempts = config.retry_unparseable ? 2 : 1;
  bool any_response = false;
  std::vector<CssRecord> scored;
  for (std::uint32_t run = 0; run < config.runs; ++run) {
    const auto blinding = make_blinding(config.seed, pair.encounter_id, run);
    JudgeVerdict final;
    for (std::uint32_t attempt = 0; attempt < max_attempts; ++attempt) {
      std::optional<JudgeVerdict> stored;
      if (store) stored = store->find(pair.encounter_id, kind, run, attempt);
      if (stored) {
        if (stored->blinding.seed != config.seed || stored->model_id != config.model_id) {
          throw Error(ErrorCode::kConfigError, "checkpoint " + (store ? store->path().string() : "") +
                                                   " was written with a different seed or model");
        }
        final = std::move(*stored);
      } else {
        final = call_backend(pair, kind, blinding, attempt, backend, config);
        if (store) store->append(final);
      }
      if (final.usable()) break;
    }
    if (!final.backend_failed()) any_response = true;

    if (kind == PromptKind::kCss) {
      if (final.css) {
        ++result.vote_split.scored;
        scored.push_back(*final.css);
      } else {
        ++result.vote_split.unparseable;
      }
    } else {
      switch (final.outcome.value_or(BinaryOutcome::kUnparseable)) {
        case BinaryOutcome::kConcordant: ++result.vote_split.concordant; break;
        case BinaryOutcome::kNotConcordant: ++result.vote_split.not_concordant; break;
        case BinaryOutcome::kUnparseable: ++result.vote_split.unparseable; break;
      }
    }
    result.runs.push_back(std::move(final));
  }

  if (!any_response) {
    throw Error(ErrorCode::kBackendExhausted, pair.encounter_id + "/" + std::string(to_string(kind)) + ": " +
                                                  result.runs.back().error);
  }
  if (kind == PromptKind::kCss) {
    result.css = aggregate_css(scored, config.runs);
    result.decision = result.css ? Decision::kScored : Decision::kIndeterminate;
  } else {
    result.decision = decide_binary(result.vote_split, config.runs);
  }
  return result;
}

nlohmann::ordered_json to_json(const ConsensusResult& result) {
  nlohmann::ordered_json j;
  j["encounter_id"] = result.encounter_id;
  j["prompt_kind"] = std::string(to_string(result.prompt_kind));
  j["decision"] = std::string(to_string(result.decision));
  if (result.css) j["css"] = to_json(*result.css);
  j["vote_split"] = {{"concordant", result.vote_split.concordant},
                     {"not_concordant", result.vote_split.not_concordant},
                     {"unparseable", result.vote_split.unparseable},
                     {"scored", result.vote_split.scored}};
  auto runs = nlohmann::ordered_json::array();
  for (const auto& v : result.runs) runs.push_back(to_json(v, /*include_latency=*/false));
  j["runs"] = std::move(runs);
  return j;
}

ConsensusResult consensus_from_json(const nlohmann::json& j) {
  ConsensusResult r;
  r.encounter_id = j.at("encounter_id").get<std::string>();
  const auto kind = prompt_kind_from_string(j.at("prompt_kind").get<std::string>());
  if (!kind) throw Error(ErrorCode::kMalformedRecord, "unknown prompt kind");
  r.prompt_kind = *kind;
  r.decision = decision_from_string(j.at("decision").get<std::string>());
  if (j.contains("css")) r.css = css_from_json(j["css"]);
  const auto& s = j.at("vote_split");
  r.vote_split = {s.at("concordant").get<std::size_t>(), s.at("not_concordant").get<std::size_t>(),
                  s.at("unparseable").get<std::size_t>(), s.value("scored", std::size_t{0})};
  for (const auto& v : j.value("runs", nlohmann::json::array())) r.runs.push_back(verdict_from_json(v));
  return r;
}

std::vector<std::string> AdjudicationOutcome::failed_encounters() const {
  std::vector<std::string> out;
  for (const auto& f : failures) {
    if (std::find(out.begin(), out.end(), f.encounter_id) == out.end()) out.push_back(f.encounter_id);
  }
  return out;
}

AdjudicationOutcome adjudicate_corpus(const Corpus& corpus, JudgeBackend& backend,
                                      const AdjudicationConfig& config, CheckpointStore* store) {
  validate(config.consensus);
  if (corpus.pairs.empty()) throw Error(ErrorCode::kEmptyCorpus, "nothing to adjudicate");

  const std::size_t n = corpus.pairs.size();
  std::vector<std::vector<ConsensusResult>> per_pair(n);
  std::vector<std::vector<PairFailure>> per_pair_failures(n);
  util::parallel_for(n, config.parallelism, [&](std::size_t i) {
    const auto& pair = corpus.pairs[i];
    for (const auto kind : config.kinds) {
      try {
        per_pair[i].push_back(run_consensus(pair, kind, backend, config.consensus, store));
      } catch (const Error& e) {
        if (e.code() == ErrorCode::kIoError || e.code() == ErrorCode::kConfigError) throw;
        spdlog::warn("adjudication failed for {} ({}): {}", pair.encounter_id, to_string(kind), e.what());
        per_pair_failures[i].push_back({pair.encounter_id, kind, e.what()});
      }
    }
  });

  AdjudicationOutcome outcome;
  for (std::size_t i = 0; i < n; ++i) {
    for (auto& r : per_pair[i]) outcome.results.push_back(std::move(r));
    for (auto& f : per_pair_failures[i]) outcome.failures.push_back(std::move(f));
  }
  return outcome;
}

}  // namespace soapbench
