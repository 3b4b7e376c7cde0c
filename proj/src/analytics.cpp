#include "soapbench/analytics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <boost/math/special_functions/beta.hpp>
#include <fmt/format.h>

#include "soapbench/error.hpp"
#include "soapbench/util/append_log.hpp"

namespace soapbench {

ProportionEstimate proportion_ci(std::size_t successes, std::size_t n, double level, Sidedness sided) {
  if (n == 0) throw Error(ErrorCode::kDomainError, "n must be at least 1");
  if (successes > n) {
    throw Error(ErrorCode::kDomainError, fmt::format("successes {} exceed n {}", successes, n));
  }
  if (!(level > 0.0 && level < 1.0)) throw Error(ErrorCode::kDomainError, fmt::format("level {} outside (0, 1)", level));

  ProportionEstimate e;
  e.successes = successes;
  e.n = n;
  e.level = level;
  e.sided = sided;
  e.point = static_cast<double>(successes) / static_cast<double>(n);

  const double k = static_cast<double>(successes);
  const double nn = static_cast<double>(n);
  const double alpha = 1.0 - level;
  using boost::math::ibeta_inv;
  if (sided == Sidedness::kTwoSided) {
    e.ci_low = successes == 0 ? 0.0 : ibeta_inv(k, nn - k + 1.0, alpha / 2.0);
    e.ci_high = successes == n ? 1.0 : ibeta_inv(k + 1.0, nn - k, 1.0 - alpha / 2.0);
  } else {
    e.ci_low = 0.0;
    if (successes == n) {
      e.ci_high = 1.0;
    } else if (successes == 0) {
      e.ci_high = 1.0 - std::pow(alpha, 1.0 / nn);
    } else {
      e.ci_high = ibeta_inv(k + 1.0, nn - k, level);
    }
  }
  e.ci_low = std::clamp(e.ci_low, 0.0, e.point);
  e.ci_high = std::clamp(e.ci_high, e.point, 1.0);
  return e;
}

MeanSd mean_sd(std::span<const double> values) {
  if (values.empty()) throw Error(ErrorCode::kEmptyInput, "mean_sd of an empty list");
  MeanSd out;
  out.n = values.size();
  out.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(out.n);
  if (out.n > 1) {
    double ss = 0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    out.sd = std::sqrt(ss / static_cast<double>(out.n - 1));
  }
  return out;
}

std::string_view to_string(ComplexityBand band) {
  switch (band) {
    case ComplexityBand::kLow: return "low";
    case ComplexityBand::kModerate: return "moderate";
    case ComplexityBand::kHigh: return "high";
  }
  return "?";
}

namespace {

constexpr ComplexityBand kBands[] = {ComplexityBand::kLow, ComplexityBand::kModerate, ComplexityBand::kHigh};

std::string_view band_range(ComplexityBand band) {
  switch (band) {
    case ComplexityBand::kLow: return "0-3";
    case ComplexityBand::kModerate: return "4-6";
    case ComplexityBand::kHigh: return "7-10";
  }
  return "?";
}

ComplexityBand band_from_string(std::string_view s) {
  for (auto b : kBands) {
    if (to_string(b) == s) return b;
  }
  throw Error(ErrorCode::kMalformedRecord, "unknown complexity band '" + std::string(s) + "'");
}

}  // namespace

ComplexityBand complexity_band(int complexity) {
  if (complexity <= 3) return ComplexityBand::kLow;
  if (complexity <= 6) return ComplexityBand::kModerate;
  return ComplexityBand::kHigh;
}

nlohmann::ordered_json to_json(const SimilarityProfile& p) {
  nlohmann::ordered_json j;
  j["encounter_id"] = p.encounter_id;
  j["surface"] = {{"tfidf_cosine", p.surface.tfidf_cosine},
                  {"jaccard", p.surface.jaccard},
                  {"levenshtein_ratio", p.surface.levenshtein_ratio}};
  auto sem = nlohmann::ordered_json::object();
  for (const auto& [id, score] : p.semantic.scores) sem[id] = score;
  j["semantic"] = std::move(sem);
  if (!p.semantic.failures.empty()) {
    auto fails = nlohmann::ordered_json::object();
    for (const auto& [id, why] : p.semantic.failures) fails[id] = why;
    j["semantic_failures"] = std::move(fails);
  }
  return j;
}

SimilarityProfile similarity_from_json(const nlohmann::json& j) {
  SimilarityProfile p;
  p.encounter_id = j.at("encounter_id").get<std::string>();
  const auto& s = j.at("surface");
  p.surface = {s.at("tfidf_cosine").get<double>(), s.at("jaccard").get<double>(),
               s.at("levenshtein_ratio").get<double>()};
  const auto semantic = j.value("semantic", nlohmann::json::object());
  for (const auto& [id, score] : semantic.items()) {
    p.semantic.scores[id] = score.get<double>();
  }
  const auto failures = j.value("semantic_failures", nlohmann::json::object());
  for (const auto& [id, why] : failures.items()) {
    p.semantic.failures[id] = why.get<std::string>();
  }
  return p;
}

namespace {

DecisionTally tally(const Corpus& corpus, const std::map<std::pair<std::string, PromptKind>, const ConsensusResult*>& by_key,
                    PromptKind kind, double level, Sidedness sided, bool count_events) {
  DecisionTally t;
  for (const auto& pair : corpus.pairs) {
    const auto it = by_key.find({pair.encounter_id, kind});
    switch (it->second->decision) {
      case Decision::kConcordant: ++t.concordant; break;
      case Decision::kNotConcordant: ++t.not_concordant; break;
      default: ++t.indeterminate; break;
    }
  }
  const std::size_t hits = count_events ? t.not_concordant + t.indeterminate : t.concordant;
  t.estimate = proportion_ci(hits, corpus.pairs.size(), level, sided);
  return t;
}

std::optional<MeanSd> maybe_mean_sd(const std::vector<double>& values) {
  if (values.empty()) return std::nullopt;
  return mean_sd(values);
}

}  // namespace

CohortReport summarize(const Corpus& corpus, std::span<const ConsensusResult> results,
                       std::span<const SimilarityProfile> profiles, nlohmann::ordered_json manifest,
                       const SummaryOptions& options) {
  if (corpus.pairs.empty()) throw Error(ErrorCode::kEmptyCorpus, "cannot summarize an empty corpus");

  std::map<std::pair<std::string, PromptKind>, const ConsensusResult*> by_key;
  std::set<PromptKind> present;
  for (const auto& r : results) {
    if (!corpus.find(r.encounter_id)) continue;
    by_key[{r.encounter_id, r.prompt_kind}] = &r;
    present.insert(r.prompt_kind);
  }
  std::set<PromptKind> needed = options.required;
  needed.insert(present.begin(), present.end());
  for (const auto kind : needed) {
    for (const auto& pair : corpus.pairs) {
      if (!by_key.contains({pair.encounter_id, kind})) {
        throw Error(ErrorCode::kMissingDecision,
                    pair.encounter_id + " has no " + std::string(to_string(kind)) + " decision");
      }
    }
  }

  CohortReport report;
  report.pairs = corpus.pairs.size();
  report.manifest = std::move(manifest);
  auto binary = [&](PromptKind kind) -> std::optional<DecisionTally> {
    if (!needed.contains(kind)) return std::nullopt;
    return tally(corpus, by_key, kind, options.level, Sidedness::kTwoSided, false);
  };
  report.top1 = binary(PromptKind::kTop1Concordance);
  report.top4 = binary(PromptKind::kTop4Concordance);
  report.plan = binary(PromptKind::kTreatmentPlan);
  if (needed.contains(PromptKind::kHallucinationScreen)) {
    report.hallucination =
        tally(corpus, by_key, PromptKind::kHallucinationScreen, options.level, Sidedness::kOneSidedUpper, true);
  }

  if (report.top1) {
    for (const auto& pair : corpus.pairs) {
      if (by_key.at({pair.encounter_id, PromptKind::kTop1Concordance})->decision != Decision::kConcordant) {
        report.discordant_ids.push_back(pair.encounter_id);
      }
    }
  }

  if (needed.contains(PromptKind::kCss)) {
    std::vector<double> similarity;
    std::map<ComplexityBand, std::vector<double>> by_band;
    for (const auto& pair : corpus.pairs) {
      const auto* r = by_key.at({pair.encounter_id, PromptKind::kCss});
      if (!r->css) {
        ++report.css_unscored;
        continue;
      }
      similarity.push_back(r->css->similarity);
      by_band[complexity_band(r->css->complexity)].push_back(r->css->similarity);
    }
    report.css = maybe_mean_sd(similarity);
    if (!similarity.empty()) {
      for (const auto band : kBands) {
        ComplexityStratum s;
        s.label = band;
        const auto& values = by_band[band];
        s.count = values.size();
        s.share = static_cast<double>(s.count) / static_cast<double>(similarity.size());
        if (!values.empty()) s.css_mean = mean_sd(values).mean;
        report.strata.push_back(s);
      }
      report.notes.push_back("complexity 3 is assigned to the low stratum");
    }
  }

  std::map<std::string, const SimilarityProfile*> profile_of;
  for (const auto& p : profiles) profile_of[p.encounter_id] = &p;
  std::vector<double> tfidf, jaccard, lev;
  std::map<std::string, std::vector<double>> semantic;
  for (const auto& pair : corpus.pairs) {
    const auto it = profile_of.find(pair.encounter_id);
    if (it == profile_of.end()) continue;
    tfidf.push_back(it->second->surface.tfidf_cosine);
    jaccard.push_back(it->second->surface.jaccard);
    lev.push_back(it->second->surface.levenshtein_ratio);
    for (const auto& [id, score] : it->second->semantic.scores) semantic[id].push_back(score);
  }
  report.tfidf = maybe_mean_sd(tfidf);
  report.jaccard = maybe_mean_sd(jaccard);
  report.levenshtein = maybe_mean_sd(lev);
  for (const auto& [id, values] : semantic) report.semantic[id] = mean_sd(values);
  if (!profiles.empty() && tfidf.size() != corpus.pairs.size()) {
    report.notes.push_back(fmt::format("similarity profiles cover {} of {} pairs", tfidf.size(), corpus.pairs.size()));
  }

  std::map<std::string, std::size_t> freq;
  for (const auto& pair : corpus.pairs) {
    if (!pair.machine_note.diagnoses.empty()) ++freq[pair.machine_note.diagnoses.front()];
  }
  report.diagnosis_frequency.assign(freq.begin(), freq.end());
  std::stable_sort(report.diagnosis_frequency.begin(), report.diagnosis_frequency.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  return report;
}

namespace {

nlohmann::ordered_json to_json(const ProportionEstimate& e) {
  return {{"successes", e.successes},
          {"n", e.n},
          {"point", e.point},
          {"ci_low", e.ci_low},
          {"ci_high", e.ci_high},
          {"level", e.level},
          {"sided", e.sided == Sidedness::kTwoSided ? "two_sided" : "one_sided_upper"}};
}

ProportionEstimate estimate_from_json(const nlohmann::json& j) {
  ProportionEstimate e;
  e.successes = j.at("successes").get<std::size_t>();
  e.n = j.at("n").get<std::size_t>();
  e.point = j.at("point").get<double>();
  e.ci_low = j.at("ci_low").get<double>();
  e.ci_high = j.at("ci_high").get<double>();
  e.level = j.at("level").get<double>();
  e.sided = j.at("sided").get<std::string>() == "two_sided" ? Sidedness::kTwoSided : Sidedness::kOneSidedUpper;
  return e;
}

nlohmann::ordered_json to_json(const DecisionTally& t) {
  return {{"concordant", t.concordant},
          {"not_concordant", t.not_concordant},
          {"indeterminate", t.indeterminate},
          {"estimate", to_json(t.estimate)}};
}

DecisionTally tally_from_json(const nlohmann::json& j) {
  return {j.at("concordant").get<std::size_t>(), j.at("not_concordant").get<std::size_t>(),
          j.at("indeterminate").get<std::size_t>(), estimate_from_json(j.at("estimate"))};
}

nlohmann::ordered_json to_json(const MeanSd& m) { return {{"mean", m.mean}, {"sd", m.sd}, {"n", m.n}}; }

MeanSd mean_sd_from_json(const nlohmann::json& j) {
  return {j.at("mean").get<double>(), j.at("sd").get<double>(), j.at("n").get<std::size_t>()};
}

}  // namespace

nlohmann::ordered_json to_json(const CohortReport& r) {
  nlohmann::ordered_json j;
  j["schema"] = "soapbench.report/1";
  j["pairs"] = r.pairs;
  auto proportions = nlohmann::ordered_json::object();
  if (r.top1) proportions["top1"] = to_json(*r.top1);
  if (r.top4) proportions["top4"] = to_json(*r.top4);
  if (r.plan) proportions["plan"] = to_json(*r.plan);
  if (r.hallucination) proportions["hallucination"] = to_json(*r.hallucination);
  j["proportions"] = std::move(proportions);
  nlohmann::ordered_json css = {{"unscored", r.css_unscored}};
  if (r.css) css["similarity"] = to_json(*r.css);
  j["css"] = std::move(css);
  auto strata = nlohmann::ordered_json::array();
  for (const auto& s : r.strata) {
    nlohmann::ordered_json row = {{"label", std::string(to_string(s.label))},
                                  {"complexity", std::string(band_range(s.label))},
                                  {"n", s.count},
                                  {"share", s.share},
                                  {"css_mean", nullptr}};
    if (s.css_mean) row["css_mean"] = *s.css_mean;
    strata.push_back(std::move(row));
  }
  j["strata"] = std::move(strata);
  auto surface = nlohmann::ordered_json::object();
  if (r.tfidf) surface["tfidf_cosine"] = to_json(*r.tfidf);
  if (r.jaccard) surface["jaccard"] = to_json(*r.jaccard);
  if (r.levenshtein) surface["levenshtein_ratio"] = to_json(*r.levenshtein);
  j["surface"] = std::move(surface);
  auto semantic = nlohmann::ordered_json::object();
  for (const auto& [id, m] : r.semantic) semantic[id] = to_json(m);
  j["semantic"] = std::move(semantic);
  j["discordant_ids"] = r.discordant_ids;
  auto freq = nlohmann::ordered_json::array();
  for (const auto& [label, count] : r.diagnosis_frequency) freq.push_back({{"label", label}, {"count", count}});
  j["diagnosis_frequency"] = std::move(freq);
  j["notes"] = r.notes;
  j["manifest"] = r.manifest;
  return j;
}

CohortReport report_from_json(const nlohmann::json& j) {
  try {
    CohortReport r;
    r.pairs = j.at("pairs").get<std::size_t>();
    const auto& p = j.at("proportions");
    if (p.contains("top1")) r.top1 = tally_from_json(p["top1"]);
    if (p.contains("top4")) r.top4 = tally_from_json(p["top4"]);
    if (p.contains("plan")) r.plan = tally_from_json(p["plan"]);
    if (p.contains("hallucination")) r.hallucination = tally_from_json(p["hallucination"]);
    const auto& css = j.at("css");
    r.css_unscored = css.value("unscored", std::size_t{0});
    if (css.contains("similarity")) r.css = mean_sd_from_json(css["similarity"]);
    for (const auto& s : j.at("strata")) {
      ComplexityStratum st;
      st.label = band_from_string(s.at("label").get<std::string>());
      st.count = s.at("n").get<std::size_t>();
      st.share = s.at("share").get<double>();
      if (!s.at("css_mean").is_null()) st.css_mean = s["css_mean"].get<double>();
      r.strata.push_back(st);
    }
    const auto& surface = j.at("surface");
    if (surface.contains("tfidf_cosine")) r.tfidf = mean_sd_from_json(surface["tfidf_cosine"]);
    if (surface.contains("jaccard")) r.jaccard = mean_sd_from_json(surface["jaccard"]);
    if (surface.contains("levenshtein_ratio")) r.levenshtein = mean_sd_from_json(surface["levenshtein_ratio"]);
    for (const auto& [id, m] : j.at("semantic").items()) r.semantic[id] = mean_sd_from_json(m);
    r.discordant_ids = j.at("discordant_ids").get<std::vector<std::string>>();
    for (const auto& f : j.at("diagnosis_frequency")) {
      r.diagnosis_frequency.emplace_back(f.at("label").get<std::string>(), f.at("count").get<std::size_t>());
    }
    r.notes = j.value("notes", std::vector<std::string>{});
    r.manifest = j.value("manifest", nlohmann::ordered_json::object());
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kMalformedRecord, std::string("report: ") + e.what());
  }
}

namespace {

std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string fixed(double v, int places = 4) { return fmt::format("{:.{}f}", v, places); }

std::string pct(double v) { return fmt::format("{:.1f}%", 100.0 * v); }

}  // namespace

std::string render_strata_csv(const CohortReport& r) {
  std::string out = "stratum,complexity,n,share_pct,css_mean\n";
  for (const auto& s : r.strata) {
    out += fmt::format("{},{},{},{},{}\n", to_string(s.label), band_range(s.label), s.count, fixed(100.0 * s.share, 2),
                       s.css_mean ? fixed(*s.css_mean, 2) : "");
  }
  return out;
}

std::string render_similarity_csv(const CohortReport& r) {
  std::string out = "group,metric,n,mean,sd\n";
  auto row = [&](std::string_view group, std::string_view metric, const std::optional<MeanSd>& m) {
    if (m) out += fmt::format("{},{},{},{},{}\n", group, csv_field(metric), m->n, fixed(m->mean), fixed(m->sd));
  };
  row("surface", "tfidf_cosine", r.tfidf);
  row("surface", "jaccard", r.jaccard);
  row("surface", "levenshtein_ratio", r.levenshtein);
  for (const auto& [id, m] : r.semantic) row("embedding", id, m);
  return out;
}

std::string render_frequency_csv(const CohortReport& r) {
  std::string out = "label,count\n";
  for (const auto& [label, count] : r.diagnosis_frequency) out += fmt::format("{},{}\n", csv_field(label), count);
  return out;
}

std::string render_summary_text(const CohortReport& r) {
  std::string out = fmt::format("Cohort of {} encounter pairs\n\n", r.pairs);
  auto line = [&](std::string_view name, const std::optional<DecisionTally>& t) {
    if (!t) {
      out += fmt::format("{:<28} not run\n", name);
      return;
    }
    const auto& e = t->estimate;
    out += fmt::format("{:<28} {}/{} = {} (95% CI {}-{}); not concordant {}, indeterminate {}\n", name, e.successes,
                       e.n, pct(e.point), pct(e.ci_low), pct(e.ci_high), t->not_concordant, t->indeterminate);
  };
  line("Top-1 diagnosis concordance", r.top1);
  line("Top-4 diagnosis concordance", r.top4);
  line("Treatment plan concordance", r.plan);
  if (r.hallucination) {
    const auto& e = r.hallucination->estimate;
    out += fmt::format("{:<28} {}/{} flagged; one-sided {:.0f}% upper bound {}\n", "Unsupported content", e.successes,
                       e.n, 100.0 * e.level, fmt::format("{:.2f}%", 100.0 * e.ci_high));
  } else {
    out += fmt::format("{:<28} not run\n", "Unsupported content");
  }

  out += "\n";
  if (r.css) {
    out += fmt::format("CSS similarity: {:.2f} +/- {:.2f} (n={}, unscored {})\n", r.css->mean, r.css->sd, r.css->n,
                       r.css_unscored);
    for (const auto& s : r.strata) {
      out += fmt::format("  {:<9} ({:>4}) n={:<5} share {:>6}  mean {}\n", to_string(s.label), band_range(s.label),
                         s.count, pct(s.share), s.css_mean ? fmt::format("{:.2f}", *s.css_mean) : "-");
    }
  } else {
    out += "CSS similarity: not available\n";
  }

  out += "\nSimilarity (mean +/- sd)\n";
  auto metric = [&](std::string_view name, const std::optional<MeanSd>& m) {
    if (m) out += fmt::format("  {:<20} {:.4f} +/- {:.4f} (n={})\n", name, m->mean, m->sd, m->n);
  };
  metric("tfidf_cosine", r.tfidf);
  metric("jaccard", r.jaccard);
  metric("levenshtein_ratio", r.levenshtein);
  for (const auto& [id, m] : r.semantic) metric(id, m);

  out += fmt::format("\nTop-1 discordant encounters: {}\n", r.discordant_ids.size());
  if (!r.diagnosis_frequency.empty()) {
    out += "\nMost frequent primary diagnoses (machine notes)\n";
    const std::size_t shown = std::min<std::size_t>(10, r.diagnosis_frequency.size());
    for (std::size_t i = 0; i < shown; ++i) {
      out += fmt::format("  {:>4}  {}\n", r.diagnosis_frequency[i].second, r.diagnosis_frequency[i].first);
    }
  }
  if (!r.notes.empty()) {
    out += "\nNotes\n";
    for (const auto& n : r.notes) out += "  - " + n + "\n";
  }
  return out;
}

std::vector<std::filesystem::path> emit_report(const CohortReport& report, const std::filesystem::path& dir,
                                               const std::set<ReportFormat>& formats) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::kIoError, "cannot create " + dir.string() + ": " + ec.message());
  std::vector<std::filesystem::path> written;
  auto put = [&](const char* name, const std::string& contents) {
    util::write_file_atomic(dir / name, contents);
    written.push_back(dir / name);
  };
  if (formats.contains(ReportFormat::kJson)) put(kReportJson, to_json(report).dump(2) + "\n");
  if (formats.contains(ReportFormat::kCsv)) {
    put(kStrataCsv, render_strata_csv(report));
    put(kSimilarityCsv, render_similarity_csv(report));
    put(kFrequencyCsv, render_frequency_csv(report));
  }
  if (formats.contains(ReportFormat::kText)) put(kSummaryTxt, render_summary_text(report));
  return written;
}

}  // namespace soapbench
