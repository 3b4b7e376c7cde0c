#include "soapbench/surface.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <type_traits>
#include <vector>

#include "soapbench/error.hpp"
#include "soapbench/util/text.hpp"

namespace soapbench {

std::size_t TokenCounts::total() const {
  std::size_t n = 0;
  for (const auto& [_, c] : counts) n += c;
  return n;
}

std::set<std::string> TokenCounts::distinct() const {
  std::set<std::string> out;
  for (const auto& [token, _] : counts) out.insert(out.end(), token);
  return out;
}

namespace {

bool is_token_byte(unsigned char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c >= 0x80;
}

}  // namespace

TokenCounts tokenize(std::string_view text) {
  TokenCounts out;
  std::string current;
  for (char ch : text) {
    if (is_token_byte(static_cast<unsigned char>(ch))) {
      current.push_back(util::ascii_lower(ch));
    } else if (!current.empty()) {
      ++out.counts[current];
      current.clear();
    }
  }
  if (!current.empty()) ++out.counts[current];
  return out;
}

IdfTable::IdfTable(std::size_t documents, std::unordered_map<std::string, std::size_t> df)
    : documents_(documents), df_(std::move(df)) {}

std::size_t IdfTable::document_frequency(const std::string& token) const {
  const auto it = df_.find(token);
  return it == df_.end() ? 0 : it->second;
}

double IdfTable::idf(const std::string& token) const {
  const double n = static_cast<double>(documents_);
  const double df = static_cast<double>(document_frequency(token));
  return std::log((1.0 + n) / (1.0 + df)) + 1.0;
}

IdfTable build_idf(std::span<const TokenCounts> documents) {
  if (documents.empty()) throw Error(ErrorCode::kEmptyCorpus, "no documents for IDF");
  std::unordered_map<std::string, std::size_t> df;
  for (const auto& doc : documents) {
    for (const auto& [token, _] : doc.counts) ++df[token];
  }
  return IdfTable(documents.size(), std::move(df));
}

IdfTable build_idf(const Corpus& corpus) {
  if (corpus.pairs.empty()) throw Error(ErrorCode::kEmptyCorpus, "corpus has no pairs");
  std::vector<TokenCounts> docs;
  docs.reserve(corpus.pairs.size() * 2);
  for (const auto& pair : corpus.pairs) {
    docs.push_back(tokenize(pair.machine_note.raw_text));
    docs.push_back(tokenize(pair.clinician_note.raw_text));
  }
  return build_idf(docs);
}

namespace {

double weighted_norm(const TokenCounts& doc, const IdfTable& idf) {
  double sum = 0;
  for (const auto& [token, count] : doc.counts) {
    const double w = static_cast<double>(count) * idf.idf(token);
    sum += w * w;
  }
  return std::sqrt(sum);
}

}  // namespace

double tfidf_cosine(const TokenCounts& a, const TokenCounts& b, const IdfTable& idf) {
  const double na = weighted_norm(a, idf);
  const double nb = weighted_norm(b, idf);
  if (na == 0.0 || nb == 0.0) return 0.0;
  // Both maps are ordered by token, so the dot product accumulates in the
  // same order whichever argument comes first.
  double dot = 0;
  auto ia = a.counts.begin();
  auto ib = b.counts.begin();
  while (ia != a.counts.end() && ib != b.counts.end()) {
    if (ia->first < ib->first) {
      ++ia;
    } else if (ib->first < ia->first) {
      ++ib;
    } else {
      const double w = idf.idf(ia->first);
      dot += (static_cast<double>(ia->second) * w) * (static_cast<double>(ib->second) * w);
      ++ia;
      ++ib;
    }
  }
  return std::clamp(dot / (na * nb), 0.0, 1.0);
}

double jaccard(const TokenSet& a, const TokenSet& b) {
  if (a.empty() && b.empty()) return 1.0;
  std::size_t common = 0;
  auto ia = a.begin();
  auto ib = b.begin();
  while (ia != a.end() && ib != b.end()) {
    const int cmp = ia->compare(*ib);
    if (cmp < 0) {
      ++ia;
    } else if (cmp > 0) {
      ++ib;
    } else {
      ++common;
      ++ia;
      ++ib;
    }
  }
  const std::size_t uni = a.size() + b.size() - common;
  return static_cast<double>(common) / static_cast<double>(uni);
}

namespace {

// Bit-vector edit distance for a pattern of at most 64 bytes. Column j of
// the DP matrix is held as vertical +1/-1 deltas in Pv/Mv.
std::size_t bit_parallel_distance(std::string_view pattern, std::string_view text) {
  // Only the entries for bytes that occur are ever read.
  std::array<std::uint64_t, 256> peq;
  for (unsigned char c : pattern) peq[c] = 0;
  for (unsigned char c : text) peq[c] = 0;
  for (std::size_t i = 0; i < pattern.size(); ++i) {
    peq[static_cast<unsigned char>(pattern[i])] |= std::uint64_t{1} << i;
  }
  const std::uint64_t high = std::uint64_t{1} << (pattern.size() - 1);
  std::uint64_t pv = ~std::uint64_t{0};
  std::uint64_t mv = 0;
  std::size_t score = pattern.size();
  for (unsigned char c : text) {
    const std::uint64_t eq = peq[c];
    const std::uint64_t xv = eq | mv;
    const std::uint64_t xh = (((eq & pv) + pv) ^ pv) | eq;
    std::uint64_t ph = mv | ~(xh | pv);
    std::uint64_t mh = pv & xh;
    if (ph & high) {
      ++score;
    } else if (mh & high) {
      --score;
    }
    ph = (ph << 1) | 1;
    mh <<= 1;
    pv = mh | ~(xv | ph);
    mv = ph & xv;
  }
  return score;
}

template <typename Seq>
std::size_t edit_distance(const Seq& s, const Seq& t) {
  std::size_t lo = 0;
  std::size_t hi_s = s.size();
  std::size_t hi_t = t.size();
  // A shared prefix or suffix never changes the distance.
  while (lo < hi_s && lo < hi_t && s[lo] == t[lo]) ++lo;
  while (hi_s > lo && hi_t > lo && s[hi_s - 1] == t[hi_t - 1]) --hi_s, --hi_t;
  const bool s_shorter = hi_s - lo <= hi_t - lo;
  const auto& row = s_shorter ? s : t;
  const auto& col = s_shorter ? t : s;
  const std::size_t rn = (s_shorter ? hi_s : hi_t) - lo;
  const std::size_t cn = (s_shorter ? hi_t : hi_s) - lo;
  if (rn == 0) return cn;
  if constexpr (std::is_same_v<Seq, std::string_view>) {
    if (rn <= 64) return bit_parallel_distance(row.substr(lo, rn), col.substr(lo, cn));
  }
  thread_local std::vector<std::size_t> prev;
  thread_local std::vector<std::size_t> cur;
  prev.resize(rn + 1);
  cur.resize(rn + 1);
  std::iota(prev.begin(), prev.end(), std::size_t{0});
  std::size_t* p = prev.data();
  std::size_t* q = cur.data();
  for (std::size_t j = 1; j <= cn; ++j) {
    q[0] = j;
    const auto cj = col[lo + j - 1];
    for (std::size_t i = 1; i <= rn; ++i) {
      const std::size_t sub = p[i - 1] + (row[lo + i - 1] == cj ? 0 : 1);
      const std::size_t gap = std::min(p[i], q[i - 1]) + 1;
      q[i] = std::min(gap, sub);
    }
    std::swap(p, q);
  }
  return p[rn];
}

bool is_ascii(std::string_view s) noexcept {
  for (unsigned char ch : s) {
    if (ch >= 0x80) return false;
  }
  return true;
}

}  // namespace

std::size_t levenshtein_distance(std::string_view a, std::string_view b) {
  if (is_ascii(a) && is_ascii(b)) return edit_distance(a, b);
  return edit_distance(util::utf8_code_points(a), util::utf8_code_points(b));
}

double levenshtein_ratio(std::string_view a, std::string_view b) {
  std::size_t longest = 0;
  std::size_t d = 0;
  if (is_ascii(a) && is_ascii(b)) {
    longest = std::max(a.size(), b.size());
    d = edit_distance(a, b);
  } else {
    const auto ca = util::utf8_code_points(a);
    const auto cb = util::utf8_code_points(b);
    longest = std::max(ca.size(), cb.size());
    d = edit_distance(ca, cb);
  }
  if (longest == 0) return 1.0;
  return 1.0 - static_cast<double>(d) / static_cast<double>(longest);
}

SurfaceScores surface_profile(const EncounterPair& pair, const IdfTable& idf) {
  const auto& a = pair.machine_note.raw_text;
  const auto& b = pair.clinician_note.raw_text;
  const auto ta = tokenize(a);
  const auto tb = tokenize(b);
  return {tfidf_cosine(ta, tb, idf), jaccard(ta.distinct(), tb.distinct()), levenshtein_ratio(a, b)};
}

}  // namespace soapbench
