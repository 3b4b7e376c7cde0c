// Acceptance suite: one line per criterion, nonzero exit if any fails.

#include <fcntl.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <bitset>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "oracles.hpp"
#include "soapbench/analytics.hpp"
#include "soapbench/backend.hpp"
#include "soapbench/checkpoint.hpp"
#include "soapbench/cli.hpp"
#include "soapbench/consensus.hpp"
#include "soapbench/error.hpp"
#include "soapbench/prompts.hpp"
#include "soapbench/semantic.hpp"
#include "soapbench/surface.hpp"
#include "soapbench/triage.hpp"
#include "soapbench/util/append_log.hpp"
#include "soapbench/util/hash.hpp"
#include "soapbench/util/text.hpp"
#include "synthetic.hpp"
#include "temp_dir.hpp"

namespace sb = soapbench;
namespace st = soapbench::testing;

namespace {

// Tolerances and budgets.
constexpr double kReportedCiTolerance = 0.005;      // +-0.5 percentage points
constexpr double kZeroBound = 0.00597;           // one-sided 0/500 upper bound
constexpr double kZeroBoundTolerance = 0.0001;   // +-0.01 percentage points
constexpr double kClosedFormTolerance = 1e-9;
constexpr double kIdentityTolerance = 1e-9;
constexpr double kShareTolerance = 0.0005;       // +-0.05 percentage points
constexpr double kCiBudgetSeconds = 1.0;
constexpr double kMetricBudgetSeconds = 30.0;
constexpr double kEndToEndBudgetSeconds = 120.0;

// Collects failure messages for one criterion.
struct Check {
  std::vector<std::string> failures;

  void expect(bool ok, const std::string& what) {
    if (!ok && failures.size() < 20) failures.push_back(what);
  }
  bool ok() const { return failures.empty(); }
};

struct Outcome {
  std::string name;
  bool pass = false;
  double seconds = 0;
  std::vector<std::string> details;
};

std::vector<Outcome> g_outcomes;

void criterion(const std::string& name, double budget_seconds, const std::function<void(Check&)>& body) {
  Check check;
  const auto start = std::chrono::steady_clock::now();
  try {
    body(check);
  } catch (const std::exception& e) {
    check.failures.push_back(std::string("exception: ") + e.what());
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (budget_seconds > 0 && secs >= budget_seconds) {
    check.failures.push_back(fmt::format("runtime {:.2f}s exceeds budget {:.0f}s", secs, budget_seconds));
  }
  Outcome o{name, check.ok(), secs, check.failures};
  std::printf("%s  %-28s %8.2fs\n", o.pass ? "PASS" : "FAIL", name.c_str(), secs);
  for (const auto& d : o.details) std::printf("        %s\n", d.c_str());
  std::fflush(stdout);
  g_outcomes.push_back(std::move(o));
}

std::string read_text(const std::filesystem::path& p) { return sb::util::read_file(p); }

std::filesystem::path fixture(const std::string& name) { return st::data_dir() / "fixtures" / name; }

// ---------------------------------------------------------------------------

void ci_arithmetic(Check& c) {
  struct Row {
    std::size_t k;
    double low, high;
  };
  for (const Row& r : {Row{405, 0.771, 0.845}, Row{477, 0.933, 0.970}, Row{496, 0.981, 0.998}}) {
    const auto e = sb::proportion_ci(r.k, 500);
    c.expect(std::abs(e.ci_low - r.low) <= kReportedCiTolerance,
             fmt::format("{}/500 low {:.5f} vs {:.3f}", r.k, e.ci_low, r.low));
    c.expect(std::abs(e.ci_high - r.high) <= kReportedCiTolerance,
             fmt::format("{}/500 high {:.5f} vs {:.3f}", r.k, e.ci_high, r.high));
    const auto oracle = st::oracle_clopper_pearson(r.k, 500, 0.95);
    c.expect(std::abs(e.ci_low - oracle.low) < 1e-9 && std::abs(e.ci_high - oracle.high) < 1e-9,
             fmt::format("{}/500 disagrees with bisection oracle", r.k));
  }
  const auto zero = sb::proportion_ci(0, 500, 0.95, sb::Sidedness::kOneSidedUpper);
  c.expect(std::abs(zero.ci_high - kZeroBound) <= kZeroBoundTolerance,
           fmt::format("0/500 one-sided upper {:.6f} vs {:.5f}", zero.ci_high, kZeroBound));
  c.expect(std::abs(zero.ci_high - (1.0 - std::pow(0.05, 1.0 / 500.0))) < 1e-15, "0/500 not the closed form");
}

// All strings of length 0..max over `alphabet`, in depth-first trie order.
std::vector<std::string> all_strings(std::string_view alphabet, std::size_t max_len) {
  std::vector<std::string> out;
  std::string cur;
  std::function<void()> rec = [&] {
    out.push_back(cur);
    if (cur.size() == max_len) return;
    for (char ch : alphabet) {
      cur.push_back(ch);
      rec();
      cur.pop_back();
    }
  };
  rec();
  return out;
}

// Distances from `a` to every string in trie order, one DP column per trie
// node, so the whole sweep costs |a| per node.
void levenshtein_row_sweep(const std::string& a, std::string_view alphabet, std::size_t max_len,
                           std::vector<std::size_t>& out) {
  out.clear();
  const std::size_t m = a.size();
  std::vector<std::vector<std::size_t>> cols(max_len + 1, std::vector<std::size_t>(m + 1));
  for (std::size_t i = 0; i <= m; ++i) cols[0][i] = i;
  std::function<void(std::size_t)> rec = [&](std::size_t depth) {
    out.push_back(cols[depth][m]);
    if (depth == max_len) return;
    for (char ch : alphabet) {
      const auto& prev = cols[depth];
      auto& next = cols[depth + 1];
      next[0] = depth + 1;
      for (std::size_t i = 1; i <= m; ++i) {
        const std::size_t sub = prev[i - 1] + (a[i - 1] == ch ? 0 : 1);
        next[i] = std::min({prev[i] + 1, next[i - 1] + 1, sub});
      }
      rec(depth + 1);
    }
  };
  rec(0);
}

std::string random_string(sb::util::SplitMix64& rng, std::string_view alphabet, std::size_t len) {
  std::string s(len, ' ');
  for (auto& ch : s) ch = alphabet[rng.below(alphabet.size())];
  return s;
}

void metric_oracles(Check& c) {
  // Levenshtein ratio, exhaustive over {a,b,c}^<=8.
  const std::string_view abc = "abc";
  const auto strings = all_strings(abc, 8);
  std::vector<std::size_t> distances;
  std::size_t lev_pairs = 0;
  for (const auto& a : strings) {
    levenshtein_row_sweep(a, abc, 8, distances);
    for (std::size_t j = 0; j < strings.size(); ++j) {
      const auto& b = strings[j];
      const std::size_t longest = std::max(a.size(), b.size());
      const double want = longest == 0 ? 1.0 : 1.0 - static_cast<double>(distances[j]) / static_cast<double>(longest);
      const double got = sb::levenshtein_ratio(a, b);
      if (got != want) c.expect(false, fmt::format("levenshtein_ratio('{}','{}') = {} want {}", a, b, got, want));
      ++lev_pairs;
    }
  }
  c.expect(lev_pairs == strings.size() * strings.size(), "levenshtein sweep incomplete");

  // Jaccard, exhaustive over {a,b,' '}^<=8 with token sets as bitsets.
  const std::string_view ab_space = "ab ";
  const auto texts = all_strings(ab_space, 8);
  std::map<std::string, std::size_t> token_index;
  std::vector<std::bitset<512>> bits(texts.size());
  std::vector<sb::TokenSet> sets(texts.size());
  for (std::size_t i = 0; i < texts.size(); ++i) {
    for (const auto& tok : st::oracle_token_set(texts[i])) {
      const auto [it, _] = token_index.emplace(tok, token_index.size());
      bits[i].set(it->second);
    }
    sets[i] = sb::tokenize(texts[i]).distinct();
  }
  c.expect(token_index.size() <= 512, "token universe larger than bitset");
  for (std::size_t i = 0; i < texts.size(); ++i) {
    for (std::size_t j = 0; j < texts.size(); ++j) {
      const auto uni = (bits[i] | bits[j]).count();
      const double want =
          uni == 0 ? 1.0 : static_cast<double>((bits[i] & bits[j]).count()) / static_cast<double>(uni);
      const double got = sb::jaccard(sets[i], sets[j]);
      if (got != want) c.expect(false, fmt::format("jaccard('{}','{}') = {} want {}", texts[i], texts[j], got, want));
    }
  }

  // 1,000 random 30-character pairs against the matrix oracles.
  sb::util::SplitMix64 rng(2024);
  for (int i = 0; i < 1000; ++i) {
    const auto a = random_string(rng, "abcde fgh", 30);
    const auto b = random_string(rng, "abcde fgh", 30);
    c.expect(sb::levenshtein_ratio(a, b) == st::oracle_levenshtein_ratio(a, b), "random levenshtein " + a + "|" + b);
    c.expect(sb::jaccard(sb::tokenize(a).distinct(), sb::tokenize(b).distinct()) ==
                 st::oracle_jaccard(st::oracle_token_set(a), st::oracle_token_set(b)),
             "random jaccard " + a + "|" + b);
  }

  // TF-IDF closed forms on two-document corpora. With N = 2 a token in one
  // document has idf ln(3/2) + 1 and a token in both has idf 1.
  const double w1 = std::log(1.5) + 1.0;
  struct Form {
    const char* a;
    const char* b;
    double want;
  };
  const Form forms[] = {
      {"x y", "x z", 1.0 / (1.0 + w1 * w1)},
      {"x", "x", 1.0},
      {"x y", "z w", 0.0},
      {"x x y", "x y", (2.0 + 1.0) / (std::sqrt(4.0 + 1.0) * std::sqrt(2.0))},
      {"x x y", "x z", 2.0 / (std::sqrt(4.0 + w1 * w1) * std::sqrt(1.0 + w1 * w1))},
      {"x y z", "x", 1.0 / std::sqrt(1.0 + 2.0 * w1 * w1)},
  };
  for (const auto& f : forms) {
    std::vector<sb::TokenCounts> docs = {sb::tokenize(f.a), sb::tokenize(f.b)};
    const auto idf = sb::build_idf(docs);
    const double got = sb::tfidf_cosine(docs[0], docs[1], idf);
    c.expect(std::abs(got - f.want) <= kClosedFormTolerance,
             fmt::format("tfidf('{}','{}') = {:.12f} want {:.12f}", f.a, f.b, got, f.want));
  }
}

// Cosine, or nullopt when either vector is zero.
std::optional<double> cosine_or_zero(const sb::EmbeddingVector& a, const sb::EmbeddingVector& b) {
  try {
    return sb::cosine(a, b);
  } catch (const sb::Error& e) {
    if (e.code() != sb::ErrorCode::kZeroVector) throw;
    return std::nullopt;
  }
}

void metric_identities(Check& c) {
  const auto corpus = sb::load_corpus(fixture("sample_pairs.jsonl"));
  const auto idf = sb::build_idf(corpus);
  auto embedder = sb::make_embedder({.id = "hash16", .kind = "hash", .dim = 16});
  std::vector<std::string> notes;
  for (const auto& p : corpus.pairs) {
    notes.push_back(p.machine_note.raw_text);
    notes.push_back(p.clinician_note.raw_text);
  }
  for (const auto& text : notes) {
    sb::EncounterPair self;
    self.encounter_id = "self";
    self.machine_note.raw_text = text;
    self.clinician_note.raw_text = text;
    const auto s = sb::surface_profile(self, idf);
    c.expect(std::abs(s.tfidf_cosine - 1.0) <= kIdentityTolerance, "self tfidf != 1");
    c.expect(std::abs(s.jaccard - 1.0) <= kIdentityTolerance, "self jaccard != 1");
    c.expect(std::abs(s.levenshtein_ratio - 1.0) <= kIdentityTolerance, "self levenshtein != 1");
    const auto v = embedder->embed(text);
    const auto self_cos = cosine_or_zero(v, v);
    c.expect(self_cos && std::abs(*self_cos - 1.0) <= kIdentityTolerance, "self embedding cosine != 1");
  }

  // Exact symmetry on random pairs drawn from fixture sentences.
  std::vector<std::string> lines;
  for (const auto& n : notes) {
    for (const auto& l : sb::util::split(n, '\n')) {
      if (!sb::util::trim(l).empty()) lines.push_back(l);
    }
  }
  sb::util::SplitMix64 rng(99);
  for (int i = 0; i < 1000; ++i) {
    std::string a, b;
    for (auto n = 1 + rng.below(4); n > 0; --n) a += lines[rng.below(lines.size())] + "\n";
    for (auto n = 1 + rng.below(4); n > 0; --n) b += lines[rng.below(lines.size())] + "\n";
    const auto ta = sb::tokenize(a);
    const auto tb = sb::tokenize(b);
    c.expect(sb::tfidf_cosine(ta, tb, idf) == sb::tfidf_cosine(tb, ta, idf), "tfidf asymmetric");
    c.expect(sb::jaccard(ta.distinct(), tb.distinct()) == sb::jaccard(tb.distinct(), ta.distinct()),
             "jaccard asymmetric");
    c.expect(sb::levenshtein_ratio(a, b) == sb::levenshtein_ratio(b, a), "levenshtein asymmetric");
    const auto ea = embedder->embed(a);
    const auto eb = embedder->embed(b);
    c.expect(cosine_or_zero(ea, eb) == cosine_or_zero(eb, ea), "embedding cosine asymmetric");
  }
}

void prompt_goldens(Check& c) {
  const auto corpus = sb::load_corpus(fixture("sample_pairs.jsonl"));
  const std::pair<sb::PromptKind, const char*> kinds[] = {{sb::PromptKind::kTop1Concordance, "prompt_top1.txt"},
                                                          {sb::PromptKind::kTop4Concordance, "prompt_top4.txt"},
                                                          {sb::PromptKind::kTreatmentPlan, "prompt_plan.txt"},
                                                          {sb::PromptKind::kCss, "prompt_css.txt"}};
  for (const auto& [kind, file] : kinds) {
    const auto golden = read_text(st::data_dir() / "golden" / file);
    c.expect(!golden.empty(), std::string("empty golden ") + file);
    for (const auto& pair : corpus.pairs) {
      for (std::uint32_t run = 0; run < 3; ++run) {
        const auto text = sb::render_prompt(kind, pair, sb::make_blinding(0, pair.encounter_id, run));
        c.expect(text.compare(0, golden.size(), golden) == 0, std::string("template mismatch for ") + file);
        c.expect(text.find(pair.machine_note.raw_text) != std::string::npos &&
                     text.find(pair.clinician_note.raw_text) != std::string::npos,
                 "notes missing from prompt");
      }
    }
  }
  const auto css = read_text(st::data_dir() / "golden" / "prompt_css.txt");
  const auto begin = css.find("Similarity: 8/10");
  const auto end = css.find("\n\nInstructions");
  c.expect(begin != std::string::npos && end != std::string::npos, "output example not found in CSS template");
  if (begin != std::string::npos && end != std::string::npos) {
    const auto rec = sb::parse_css(css.substr(begin, end - begin));
    c.expect(rec.similarity == 8 && rec.complexity == 3 && !rec.comorbidity &&
                 rec.icd_label == "acute viral rhinitis" && rec.difference.rfind("Doctronic's note emphasized", 0) == 0,
             "output format example parsed wrongly");
  }
  for (const char* bad : {"Similarity: 11/10 | Complexity: 3/10 | Co-morbidity: No | ICD: x",
                          "Similarity: 8/10 | Complexity: 12/10 | Co-morbidity: No | ICD: x",
                          "Similarity: 8/10 | Complexity: -1/10 | Co-morbidity: No | ICD: x"}) {
    bool rejected = false;
    try {
      sb::parse_css(bad);
    } catch (const sb::Error& e) {
      rejected = e.code() == sb::ErrorCode::kCssParseFailure;
    }
    c.expect(rejected, std::string("accepted out-of-range CSS: ") + bad);
  }
}

struct SyntheticRun {
  st::SyntheticCorpus synthetic;
  std::filesystem::path corpus_file;
  std::filesystem::path script_file;
};

SyntheticRun write_synthetic(const st::TempDir& dir, const st::SyntheticOptions& options = {}) {
  SyntheticRun r{st::make_synthetic(options), dir / "synthetic.jsonl", dir / "script.json"};
  r.synthetic.write(r.corpus_file, r.script_file);
  return r;
}

sb::RunConfig synthetic_config(const SyntheticRun& run, const std::filesystem::path& out) {
  sb::RunConfig config;
  config.corpus = run.corpus_file;
  config.script = run.script_file;
  config.out = out;
  config.seed = 20240;
  return config;
}

// Shared with the triage criterion.
std::filesystem::path g_e2e_out;
const st::SyntheticCorpus* g_e2e_synthetic = nullptr;

void end_to_end(Check& c, const st::TempDir& dir, const SyntheticRun& run) {
  const auto out_a = dir / "run_a";
  const auto out_b = dir / "run_b";
  c.expect(sb::cmd_run(synthetic_config(run, out_a)) == sb::kExitOk, "first run did not exit 0");
  c.expect(sb::cmd_run(synthetic_config(run, out_b)) == sb::kExitOk, "second run did not exit 0");
  g_e2e_out = out_a;

  const auto report = nlohmann::json::parse(read_text(out_a / sb::kReportJson));
  const auto& p = report["proportions"];
  auto point = [&](const char* kind) { return p[kind]["estimate"]["point"].get<double>(); };
  c.expect(report["pairs"] == 500, "pairs != 500");
  c.expect(point("top1") == 405.0 / 500.0, fmt::format("top1 point {}", point("top1")));
  c.expect(point("top4") == 477.0 / 500.0, fmt::format("top4 point {}", point("top4")));
  c.expect(point("plan") == 496.0 / 500.0, fmt::format("plan point {}", point("plan")));
  const auto summary = read_text(out_a / sb::kSummaryTxt);
  for (const char* shown : {"81.0%", "95.4%", "99.2%"}) {
    c.expect(summary.find(shown) != std::string::npos, std::string("summary lacks ") + shown);
  }
  c.expect(p["top1"]["indeterminate"] == 2, "expected the two scripted indeterminate top-1 pairs");

  for (const std::string& f : std::vector<std::string>{sb::kReportJson, sb::kStrataCsv, sb::kSimilarityCsv, sb::kFrequencyCsv,
                              sb::kSummaryTxt, sb::kConsensusFile, sb::kSimilarityFile, sb::kExclusionsFile,
                              std::string(sb::kTriageDir) + "/" + sb::TriageStore::kQueueFile}) {
    c.expect(read_text(out_a / f) == read_text(out_b / f), "outputs differ: " + f);
  }
}

// Replies in call order.
class SequenceBackend : public sb::JudgeBackend {
 public:
  explicit SequenceBackend(std::vector<std::string> replies) : replies_(std::move(replies)) {}
  std::string complete(const std::string&, const std::string&) override {
    if (next_ == replies_.size()) throw sb::Error(sb::ErrorCode::kBackendError, "no reply left");
    return replies_[next_++];
  }
  bool exhausted() const { return next_ == replies_.size(); }

 private:
  std::vector<std::string> replies_;
  std::size_t next_ = 0;
};

void consensus_table(Check& c) {
  // Hand-written decision table keyed by (concordant, not_concordant).
  const std::map<std::pair<int, int>, sb::Decision> table = {
      {{3, 0}, sb::Decision::kConcordant},    {{2, 1}, sb::Decision::kConcordant},
      {{2, 0}, sb::Decision::kConcordant},    {{0, 3}, sb::Decision::kNotConcordant},
      {{1, 2}, sb::Decision::kNotConcordant}, {{0, 2}, sb::Decision::kNotConcordant},
      {{1, 1}, sb::Decision::kIndeterminate}, {{1, 0}, sb::Decision::kIndeterminate},
      {{0, 1}, sb::Decision::kIndeterminate}, {{0, 0}, sb::Decision::kIndeterminate}};
  const char* kReplies[] = {"<001>", "<000>", "I cannot tell."};
  sb::EncounterPair pair;
  pair.encounter_id = "VOTE";
  pair.machine_note = sb::parse_soap("Assessment:\n1. Asthma\n", sb::Author::kMachine);
  pair.clinician_note = sb::parse_soap("Assessment: Asthma\n", sb::Author::kClinician);
  int patterns = 0;
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < 3; ++b) {
      for (int d = 0; d < 3; ++d) {
        const int runs[] = {a, b, d};
        // An unparseable run is retried once, so it consumes two replies.
        std::vector<std::string> replies;
        for (int r : runs) {
          replies.push_back(kReplies[r]);
          if (r == 2) replies.push_back(kReplies[r]);
        }
        SequenceBackend backend(std::move(replies));
        const auto result = sb::run_consensus(pair, sb::PromptKind::kTop1Concordance, backend, {});
        c.expect(backend.exhausted(), fmt::format("pattern {}{}{} left replies unused", a, b, d));
        const int yes = (a == 0) + (b == 0) + (d == 0);
        const int no = (a == 1) + (b == 1) + (d == 1);
        const auto want = table.at({yes, no});
        c.expect(result.decision == want, fmt::format("pattern {}{}{} decided {}", a, b, d,
                                                      sb::to_string(result.decision)));
        c.expect(sb::decide_binary({static_cast<std::size_t>(yes), static_cast<std::size_t>(no),
                                    static_cast<std::size_t>(3 - yes - no), 0},
                                   3) == want,
                 fmt::format("decide_binary {}{}{}", a, b, d));
        ++patterns;
      }
    }
  }
  c.expect(patterns == 27, "not all 27 patterns ran");
}

void triage_reproduction(Check& c) {
  std::vector<sb::ReviewVerdict> verdicts;
  const std::pair<sb::ReviewCategory, int> mix[] = {{sb::ReviewCategory::kMachineSuperior, 35},
                                                    {sb::ReviewCategory::kClinicianSuperior, 9},
                                                    {sb::ReviewCategory::kSameLowSpecificity, 36},
                                                    {sb::ReviewCategory::kIndeterminate, 17}};
  for (const auto& [cat, n] : mix) {
    for (int i = 0; i < n; ++i) {
      sb::ReviewVerdict v;
      v.encounter_id = fmt::format("R{}", verdicts.size());
      v.category = cat;
      verdicts.push_back(v);
    }
  }
  const auto s = sb::summarize_verdicts(verdicts);
  const std::pair<sb::ReviewCategory, double> want[] = {{sb::ReviewCategory::kMachineSuperior, 0.361},
                                                        {sb::ReviewCategory::kClinicianSuperior, 0.093},
                                                        {sb::ReviewCategory::kSameLowSpecificity, 0.371},
                                                        {sb::ReviewCategory::kIndeterminate, 0.175}};
  for (const auto& [cat, share] : want) {
    c.expect(std::abs(s.shares.at(cat) - share) <= kShareTolerance,
             fmt::format("{} share {:.4f} vs {:.3f}", sb::to_string(cat), s.shares.at(cat), share));
  }
  c.expect(s.reviewed == 97, "reviewed != 97");

  // Queue set equals the report's discordant set on the synthetic run.
  c.expect(!g_e2e_out.empty() && g_e2e_synthetic, "end-to-end run unavailable");
  if (g_e2e_out.empty() || !g_e2e_synthetic) return;
  const auto report = nlohmann::json::parse(read_text(g_e2e_out / sb::kReportJson));
  const auto discordant = report["discordant_ids"].get<std::set<std::string>>();
  sb::TriageStore store(g_e2e_out / sb::kTriageDir);
  std::set<std::string> queued;
  for (const auto& item : store.items()) queued.insert(item.encounter_id);
  c.expect(store.items().size() == queued.size(), "queue holds duplicates");
  c.expect(queued == discordant, "queue set differs from report discordant set");
  c.expect(discordant == g_e2e_synthetic->top1_discordant, "discordant set differs from the scripted one");
  c.expect(discordant.size() == 95, fmt::format("{} discordant, want 95", discordant.size()));
}

std::size_t count_lines(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::size_t n = 0;
  std::string line;
  while (std::getline(in, line)) ++n;
  return n;
}

// Runs `child` in a forked process and SIGKILLs it once `log` has at least
// `lines` lines. Returns false if the child finished first.
bool kill_when(const std::filesystem::path& log, std::size_t lines, const std::function<void()>& child) {
  std::fflush(nullptr);
  const pid_t pid = ::fork();
  if (pid < 0) throw std::runtime_error("fork failed");
  if (pid == 0) {
    try {
      child();
    } catch (...) {
      ::_exit(3);
    }
    ::_exit(0);
  }
  bool killed = false;
  for (;;) {
    int status = 0;
    if (::waitpid(pid, &status, WNOHANG) == pid) break;
    if (std::filesystem::exists(log) && count_lines(log) >= lines) {
      ::kill(pid, SIGKILL);
      ::waitpid(pid, &status, 0);
      killed = true;
      break;
    }
    ::usleep(200);
  }
  return killed;
}

std::string dump_results(const std::vector<sb::ConsensusResult>& results) {
  std::string out;
  for (const auto& r : results) out += sb::to_json(r).dump() + "\n";
  return out;
}

void crash_safety(Check& c, const st::TempDir& dir) {
  st::SyntheticOptions options;
  options.pairs = 60;
  options.top1_concordant = 50;
  options.top4_concordant = 56;
  options.plan_concordant = 58;
  options.noise_every = 0;
  const auto run = write_synthetic(dir, options);
  const auto corpus = sb::load_corpus(run.corpus_file);
  const auto script = nlohmann::json::parse(read_text(run.script_file));
  sb::AdjudicationConfig config;
  config.consensus.seed = 5;

  // Reference: a clean, uninterrupted run.
  std::string clean;
  std::size_t total_calls = 0;
  {
    const auto path = dir / "clean.jsonl";
    auto backend = sb::ScriptedBackend::from_json(script);
    sb::CheckpointStore store(path);
    clean = dump_results(sb::adjudicate_corpus(corpus, *backend, config, &store).results);
    total_calls = backend->calls();
  }

  // Adjudication killed mid-run, then resumed.
  const auto log = dir / "verdicts.jsonl";
  const bool killed = kill_when(log, total_calls / 2, [&] {
    spdlog::set_level(spdlog::level::off);
    auto backend = sb::ScriptedBackend::from_json(script);
    sb::CheckpointStore store(log);
    sb::adjudicate_corpus(corpus, *backend, config, &store);
  });
  c.expect(killed, "adjudication child finished before it could be killed");
  const std::size_t lines_after_kill = count_lines(log);
  {
    // Also simulate a torn in-flight record.
    std::ofstream torn(log, std::ios::app | std::ios::binary);
    torn << R"({"encounter_id":"SYN-0059","prompt_kind":"top4","run_in)";
  }
  auto backend = sb::ScriptedBackend::from_json(script);
  std::string resumed;
  std::size_t recovered = 0;
  {
    sb::CheckpointStore store(log);
    c.expect(store.discarded_on_open() <= 1, "more than the in-flight record was discarded");
    recovered = store.size();
    c.expect(recovered + 1 >= lines_after_kill, "completed records were lost");
    resumed = dump_results(sb::adjudicate_corpus(corpus, *backend, config, &store).results);
  }
  c.expect(backend->calls() == total_calls - recovered,
           fmt::format("resume made {} calls, want {}", backend->calls(), total_calls - recovered));
  c.expect(resumed == clean, "resumed results differ from a clean run");
  {
    std::set<std::tuple<std::string, std::string, int, int>> keys;
    std::size_t records = 0;
    sb::util::AppendLog check(log);
    for (const auto& j : check.open()) {
      ++records;
      keys.emplace(j["encounter_id"], j["prompt_kind"], j["run_index"], j["attempt"]);
    }
    c.expect(keys.size() == records, "duplicate checkpoint keys after resume");
    c.expect(records == total_calls, fmt::format("{} checkpoint records, want {}", records, total_calls));
  }

  // Verdict writes killed mid-run, then resumed.
  const auto triage_dir = dir / "triage";
  std::vector<sb::ReviewItem> items;
  for (const auto& pair : corpus.pairs) {
    sb::ReviewItem item;
    item.encounter_id = pair.encounter_id;
    item.machine_note = pair.machine_note.raw_text;
    item.clinician_note = pair.clinician_note.raw_text;
    items.push_back(item);
  }
  sb::TriageStore::write_queue(triage_dir, items);
  auto verdict_for = [](const std::string& id, std::size_t i) {
    sb::ReviewVerdict v;
    v.encounter_id = id;
    v.category = sb::kReviewCategories[i % 4];
    v.rationale = "case " + id;
    return v;
  };
  const auto verdict_log = triage_dir / sb::TriageStore::kVerdictLog;
  const bool killed_triage = kill_when(verdict_log, items.size() / 2, [&] {
    spdlog::set_level(spdlog::level::off);
    sb::TriageStore store(triage_dir);
    for (std::size_t i = 0; i < items.size(); ++i) {
      store.record_verdict(verdict_for(items[i].encounter_id, i));
      ::usleep(500);
    }
  });
  c.expect(killed_triage, "verdict child finished before it could be killed");
  {
    sb::TriageStore store(triage_dir);
    const auto before = store.verdicts().size();
    c.expect(before + 1 >= items.size() / 2, "recorded verdicts were lost");
    // Restart replays every verdict; resubmitting is idempotent.
    std::size_t duplicates = 0;
    for (std::size_t i = 0; i < items.size(); ++i) {
      duplicates += store.record_verdict(verdict_for(items[i].encounter_id, i)).duplicate;
    }
    c.expect(duplicates == before, fmt::format("{} duplicates acknowledged, want {}", duplicates, before));
    c.expect(store.pending().empty(), "queue not drained after restart");
  }
  sb::util::AppendLog check(verdict_log);
  std::set<std::string> ids;
  std::size_t records = 0;
  for (const auto& j : check.open()) {
    ++records;
    ids.insert(j["encounter_id"].get<std::string>());
  }
  c.expect(records == items.size() && ids.size() == items.size(),
           fmt::format("{} verdict records for {} ids, want {}", records, ids.size(), items.size()));
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::err);
  st::TempDir dir;

  criterion("ci-arithmetic", kCiBudgetSeconds, ci_arithmetic);
  criterion("metric-oracle-equivalence", kMetricBudgetSeconds, metric_oracles);
  criterion("metric-identities", 0, metric_identities);
  criterion("prompt-golden-files", 0, prompt_goldens);

  const auto synthetic = write_synthetic(dir);
  g_e2e_synthetic = &synthetic.synthetic;
  criterion("end-to-end-determinism", kEndToEndBudgetSeconds, [&](Check& c) { end_to_end(c, dir, synthetic); });
  criterion("consensus-logic", 0, consensus_table);
  criterion("triage-reproduction", 0, triage_reproduction);
  criterion("crash-safety", 0, [&](Check& c) { crash_safety(c, dir); });

  std::size_t passed = 0;
  for (const auto& o : g_outcomes) passed += o.pass;
  std::printf("%zu/%zu acceptance criteria passed\n", passed, g_outcomes.size());
  return passed == g_outcomes.size() ? 0 : 1;
}
