#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "oracles.hpp"
#include "soapbench/analytics.hpp"
#include "soapbench/error.hpp"
#include "soapbench/util/append_log.hpp"
#include "soapbench/util/hash.hpp"
#include "temp_dir.hpp"

namespace soapbench {
namespace {

using testing::oracle_clopper_pearson;

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no Error thrown";
  return ErrorCode::kIoError;
}

TEST(ProportionCi, MatchesBisectionOracle) {
  for (auto [k, n] : std::vector<std::pair<std::size_t, std::size_t>>{
           {405, 500}, {477, 500}, {496, 500}, {1, 10}, {9, 10}, {0, 20}, {20, 20}, {17, 97}, {50, 100}}) {
    const auto est = proportion_ci(k, n);
    const auto want = oracle_clopper_pearson(k, n, 0.95);
    EXPECT_NEAR(est.ci_low, want.low, 1e-9) << k << "/" << n;
    EXPECT_NEAR(est.ci_high, want.high, 1e-9) << k << "/" << n;
    EXPECT_DOUBLE_EQ(est.point, static_cast<double>(k) / static_cast<double>(n));
  }
}

TEST(ProportionCi, FrozenCohortIntervals) {
  const auto top1 = proportion_ci(405, 500);
  EXPECT_NEAR(top1.point, 0.81, 1e-12);
  EXPECT_NEAR(top1.ci_low, 0.77282, 5e-6);
  EXPECT_NEAR(top1.ci_high, 0.84347, 5e-6);
  const auto top4 = proportion_ci(477, 500);
  EXPECT_NEAR(top4.ci_low, 0.93177, 5e-6);
  EXPECT_NEAR(top4.ci_high, 0.97062, 5e-6);
  const auto plan = proportion_ci(496, 500);
  EXPECT_NEAR(plan.ci_low, 0.97964, 5e-6);
  EXPECT_NEAR(plan.ci_high, 0.99782, 5e-6);
}

TEST(ProportionCi, OneSidedZeroEvents) {
  const auto est = proportion_ci(0, 500, 0.95, Sidedness::kOneSidedUpper);
  EXPECT_DOUBLE_EQ(est.ci_low, 0.0);
  EXPECT_NEAR(est.ci_high, 1.0 - std::pow(0.05, 1.0 / 500.0), 1e-15);
  EXPECT_NEAR(est.ci_high, 0.0059736, 1e-7);
  // P(X = 0 | p = upper) = alpha.
  EXPECT_NEAR(std::pow(1.0 - est.ci_high, 500.0), 0.05, 1e-12);
}

TEST(ProportionCi, OneSidedMatchesOracleAtDoubledAlpha) {
  for (std::size_t k : {1u, 3u, 10u, 250u}) {
    const auto est = proportion_ci(k, 500, 0.95, Sidedness::kOneSidedUpper);
    const auto want = oracle_clopper_pearson(k, 500, 0.90);
    EXPECT_NEAR(est.ci_high, want.high, 1e-9) << k;
    EXPECT_EQ(est.sided, Sidedness::kOneSidedUpper);
  }
}

TEST(ProportionCi, DomainErrors) {
  EXPECT_EQ(code_of([] { proportion_ci(1, 0); }), ErrorCode::kDomainError);
  EXPECT_EQ(code_of([] { proportion_ci(6, 5); }), ErrorCode::kDomainError);
  EXPECT_EQ(code_of([] { proportion_ci(1, 5, 1.0); }), ErrorCode::kDomainError);
  EXPECT_EQ(code_of([] { proportion_ci(1, 5, 0.0); }), ErrorCode::kDomainError);
}

TEST(ProportionCiProperty, ValidAndNestedAcrossLevels) {
  util::SplitMix64 rng(31);
  for (int iter = 0; iter < 500; ++iter) {
    const std::size_t n = 1 + rng.below(300);
    const std::size_t k = rng.below(n + 1);
    const auto narrow = proportion_ci(k, n, 0.80);
    const auto wide = proportion_ci(k, n, 0.99);
    for (const auto& e : {narrow, wide}) {
      ASSERT_GE(e.ci_low, 0.0);
      ASSERT_LE(e.ci_high, 1.0);
      ASSERT_LE(e.ci_low, e.point);
      ASSERT_LE(e.point, e.ci_high);
    }
    ASSERT_LE(wide.ci_low, narrow.ci_low + 1e-12);
    ASSERT_GE(wide.ci_high, narrow.ci_high - 1e-12);
    if (k == 0) ASSERT_EQ(wide.ci_low, 0.0);
    if (k == n) ASSERT_EQ(wide.ci_high, 1.0);
  }
}

// Exact intervals are conservative: coverage is at least the nominal level.
TEST(ProportionCiProperty, CoverageAtLeastNominal) {
  util::SplitMix64 rng(32);
  constexpr int kDraws = 10000;
  constexpr std::size_t kN = 50;
  for (double p : {0.1, 0.5, 0.9}) {
    int covered = 0;
    std::vector<ProportionEstimate> by_k;
    for (std::size_t k = 0; k <= kN; ++k) by_k.push_back(proportion_ci(k, kN));
    for (int d = 0; d < kDraws; ++d) {
      std::size_t k = 0;
      for (std::size_t t = 0; t < kN; ++t) k += static_cast<double>(rng.next() >> 11) * 0x1.0p-53 < p;
      covered += by_k[k].ci_low <= p && p <= by_k[k].ci_high;
    }
    // 3 binomial SDs below 0.95 at 10k draws.
    EXPECT_GE(static_cast<double>(covered) / kDraws, 0.95 - 3 * std::sqrt(0.95 * 0.05 / kDraws)) << p;
  }
}

TEST(MeanSdTest, Cases) {
  const std::vector<double> flat = {5, 5, 5};
  EXPECT_DOUBLE_EQ(mean_sd(flat).mean, 5.0);
  EXPECT_DOUBLE_EQ(mean_sd(flat).sd, 0.0);
  const std::vector<double> ramp = {1, 2, 3, 4};
  EXPECT_DOUBLE_EQ(mean_sd(ramp).mean, 2.5);
  EXPECT_NEAR(mean_sd(ramp).sd, 1.290994, 1e-6);
  const std::vector<double> one = {7};
  EXPECT_DOUBLE_EQ(mean_sd(one).mean, 7.0);
  EXPECT_DOUBLE_EQ(mean_sd(one).sd, 0.0);
  EXPECT_EQ(mean_sd(one).n, 1u);
  EXPECT_EQ(code_of([] { mean_sd(std::span<const double>{}); }), ErrorCode::kEmptyInput);
}

TEST(ComplexityBandTest, Boundaries) {
  EXPECT_EQ(complexity_band(0), ComplexityBand::kLow);
  EXPECT_EQ(complexity_band(3), ComplexityBand::kLow);
  EXPECT_EQ(complexity_band(4), ComplexityBand::kModerate);
  EXPECT_EQ(complexity_band(6), ComplexityBand::kModerate);
  EXPECT_EQ(complexity_band(7), ComplexityBand::kHigh);
  EXPECT_EQ(complexity_band(10), ComplexityBand::kHigh);
}

// Cohort fixture: pair i gets top1 concordant unless i % 4 == 0, complexity i % 11.
struct Cohort {
  Corpus corpus;
  std::vector<ConsensusResult> results;
  std::vector<SimilarityProfile> profiles;
};

ConsensusResult decided(const std::string& id, PromptKind kind, Decision d) {
  ConsensusResult r;
  r.encounter_id = id;
  r.prompt_kind = kind;
  r.decision = d;
  return r;
}

Cohort make_cohort(std::size_t n) {
  Cohort c;
  std::vector<EncounterPair> pairs;
  const char* primaries[] = {"Migraine", "Asthma", "Migraine", "Otitis", "Migraine", "Asthma"};
  for (std::size_t i = 0; i < n; ++i) {
    EncounterPair p;
    p.encounter_id = "C" + std::to_string(100 + i);
    p.machine_note = parse_soap(std::string("Assessment:\n1. ") + primaries[i % 6] + "\n2. b\n3. c\n4. d\n",
                                Author::kMachine);
    p.clinician_note = parse_soap("Assessment: x", Author::kClinician);
    pairs.push_back(std::move(p));
  }
  c.corpus = make_corpus(std::move(pairs));
  for (std::size_t i = 0; i < n; ++i) {
    const auto& id = c.corpus.pairs[i].encounter_id;
    c.results.push_back(decided(id, PromptKind::kTop1Concordance,
                                i % 4 == 0 ? Decision::kNotConcordant : Decision::kConcordant));
    c.results.push_back(decided(id, PromptKind::kTop4Concordance,
                                i % 8 == 0 ? Decision::kIndeterminate : Decision::kConcordant));
    c.results.push_back(decided(id, PromptKind::kTreatmentPlan, Decision::kConcordant));
    auto css = decided(id, PromptKind::kCss, Decision::kScored);
    css.css = CssRecord{static_cast<int>(i % 10), static_cast<int>(i % 11), false, "x", ""};
    if (i == 5) {
      css.decision = Decision::kIndeterminate;
      css.css.reset();
    }
    c.results.push_back(std::move(css));
    SimilarityProfile prof;
    prof.encounter_id = id;
    prof.surface = {0.5, 0.25, static_cast<double>(i) / static_cast<double>(n)};
    prof.semantic.scores["hash16"] = 0.75;
    c.profiles.push_back(prof);
  }
  return c;
}

TEST(Summarize, Tallies) {
  const auto c = make_cohort(40);
  const auto r = summarize(c.corpus, c.results, c.profiles);
  EXPECT_EQ(r.pairs, 40u);
  ASSERT_TRUE(r.top1);
  EXPECT_EQ(r.top1->concordant, 30u);
  EXPECT_EQ(r.top1->not_concordant, 10u);
  EXPECT_DOUBLE_EQ(r.top1->estimate.point, 0.75);
  ASSERT_TRUE(r.top4);
  EXPECT_EQ(r.top4->indeterminate, 5u);
  EXPECT_EQ(r.top4->estimate.successes, 35u);  // indeterminate counts against
  EXPECT_EQ(r.discordant_ids.size(), 10u);
  EXPECT_EQ(r.discordant_ids[0], "C100");
  ASSERT_TRUE(r.css);
  EXPECT_EQ(r.css->n, 39u);
  EXPECT_EQ(r.css_unscored, 1u);
  ASSERT_TRUE(r.levenshtein);
  EXPECT_EQ(r.levenshtein->n, 40u);
  EXPECT_DOUBLE_EQ(r.tfidf->mean, 0.5);
  EXPECT_DOUBLE_EQ(r.semantic.at("hash16").mean, 0.75);
  EXPECT_FALSE(r.hallucination);
}

TEST(Summarize, StrataPartitionTheScoredPairs) {
  const auto c = make_cohort(40);
  const auto r = summarize(c.corpus, c.results, c.profiles);
  ASSERT_EQ(r.strata.size(), 3u);
  std::size_t total = 0;
  double share = 0;
  for (const auto& s : r.strata) {
    total += s.count;
    share += s.share;
  }
  EXPECT_EQ(total, 39u);
  EXPECT_NEAR(share, 1.0, 1e-12);
  // Oracle: count complexities per band directly.
  std::size_t low = 0;
  for (std::size_t i = 0; i < 40; ++i) low += i != 5 && i % 11 <= 3;
  EXPECT_EQ(r.strata[0].label, ComplexityBand::kLow);
  EXPECT_EQ(r.strata[0].count, low);
}

TEST(Summarize, DiagnosisFrequencyDescending) {
  const auto c = make_cohort(12);
  const auto r = summarize(c.corpus, c.results, c.profiles);
  ASSERT_EQ(r.diagnosis_frequency.size(), 3u);
  EXPECT_EQ(r.diagnosis_frequency[0], (std::pair<std::string, std::size_t>{"Migraine", 6}));
  EXPECT_EQ(r.diagnosis_frequency[1], (std::pair<std::string, std::size_t>{"Asthma", 4}));
  EXPECT_EQ(r.diagnosis_frequency[2], (std::pair<std::string, std::size_t>{"Otitis", 2}));
}

TEST(Summarize, MissingDecisionThrows) {
  auto c = make_cohort(4);
  c.results.erase(c.results.begin());  // C100 loses top1
  EXPECT_EQ(code_of([&] { summarize(c.corpus, c.results, c.profiles); }), ErrorCode::kMissingDecision);
  auto d = make_cohort(4);
  d.results.erase(d.results.begin() + 3);  // C100 loses css, others have it
  EXPECT_EQ(code_of([&] { summarize(d.corpus, d.results, d.profiles); }), ErrorCode::kMissingDecision);
}

TEST(Summarize, HallucinationUsesOneSidedBound) {
  auto c = make_cohort(20);
  for (const auto& p : c.corpus.pairs) {
    c.results.push_back(decided(p.encounter_id, PromptKind::kHallucinationScreen, Decision::kConcordant));
  }
  const auto r = summarize(c.corpus, c.results, c.profiles);
  ASSERT_TRUE(r.hallucination);
  EXPECT_EQ(r.hallucination->estimate.successes, 0u);
  EXPECT_EQ(r.hallucination->estimate.sided, Sidedness::kOneSidedUpper);
  EXPECT_NEAR(r.hallucination->estimate.ci_high, 1.0 - std::pow(0.05, 1.0 / 20.0), 1e-12);
}

TEST(ReportJson, RoundTrip) {
  const auto c = make_cohort(30);
  nlohmann::ordered_json manifest = {{"tool", "soapbench"}, {"seed", 3}};
  const auto r = summarize(c.corpus, c.results, c.profiles, manifest);
  const auto j = to_json(r);
  EXPECT_EQ(j["schema"], "soapbench.report/1");
  const auto back = report_from_json(nlohmann::json::parse(j.dump()));
  EXPECT_EQ(nlohmann::json::parse(to_json(back).dump()), nlohmann::json::parse(j.dump()));
}

TEST(EmitReport, WritesAllFormatsDeterministically) {
  const auto c = make_cohort(30);
  const auto r = summarize(c.corpus, c.results, c.profiles);
  testing::TempDir a, b;
  const auto written = emit_report(r, a.path());
  EXPECT_EQ(written.size(), 5u);
  emit_report(summarize(c.corpus, c.results, c.profiles), b.path());
  for (const char* f : {kReportJson, kStrataCsv, kSimilarityCsv, kFrequencyCsv, kSummaryTxt}) {
    EXPECT_EQ(util::read_file(a / f), util::read_file(b / f)) << f;
  }
  const auto strata = util::read_file(a / kStrataCsv);
  EXPECT_EQ(strata.rfind("stratum,complexity,n,share_pct,css_mean\n", 0), 0u);
  EXPECT_EQ(util::read_file(a / kFrequencyCsv).rfind("label,count\n", 0), 0u);
  EXPECT_EQ(util::read_file(a / kSimilarityCsv).rfind("group,metric,n,mean,sd\n", 0), 0u);

  testing::TempDir only_json;
  EXPECT_EQ(emit_report(r, only_json.path(), {ReportFormat::kJson}).size(), 1u);
}

TEST(FrequencyCsv, QuotesLabels) {
  CohortReport r;
  r.diagnosis_frequency = {{"Reflux, \"silent\"", 2}};
  EXPECT_EQ(render_frequency_csv(r), "label,count\n\"Reflux, \"\"silent\"\"\",2\n");
}

TEST(SimilarityJson, RoundTrip) {
  SimilarityProfile p;
  p.encounter_id = "E";
  p.surface = {0.1, 0.2, 0.3};
  p.semantic.scores["a"] = 0.9;
  p.semantic.failures["b"] = "down";
  const auto back = similarity_from_json(nlohmann::json::parse(to_json(p).dump()));
  EXPECT_EQ(back.encounter_id, "E");
  EXPECT_EQ(back.surface, p.surface);
  EXPECT_EQ(back.semantic, p.semantic);
}

}  // namespace
}  // namespace soapbench
