#pragma once

#include <cstddef>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>

#include "soapbench/note.hpp"

namespace soapbench {

/// Lowercased token multiset of one document.
struct TokenCounts {
  std::map<std::string, std::size_t> counts;

  std::size_t total() const;
  std::set<std::string> distinct() const;
  bool operator==(const TokenCounts&) const = default;
};

using TokenSet = std::set<std::string>;

/// Lowercase, split on any character that is not an ASCII letter or digit.
/// Bytes >= 0x80 are kept inside tokens so accented words stay whole.
TokenCounts tokenize(std::string_view text);

// Smoothed inverse document frequency: idf(t) = ln((1 + N) / (1 + df(t))) + 1.
class IdfTable {
 public:
  IdfTable() = default;
  IdfTable(std::size_t documents, std::unordered_map<std::string, std::size_t> df);

  double idf(const std::string& token) const;
  std::size_t documents() const noexcept { return documents_; }
  std::size_t document_frequency(const std::string& token) const;

 private:
  std::size_t documents_ = 0;
  std::unordered_map<std::string, std::size_t> df_;
};

/// One document per note, both authors. Throws Error(kEmptyCorpus).
IdfTable build_idf(const Corpus& corpus);
IdfTable build_idf(std::span<const TokenCounts> documents);

/// Cosine of the raw-count TF times IDF vectors; 0 when either is all-zero.
double tfidf_cosine(const TokenCounts& a, const TokenCounts& b, const IdfTable& idf);

/// |a ∩ b| / |a ∪ b|; 1 when both are empty.
double jaccard(const TokenSet& a, const TokenSet& b);

/// Unit-cost edit distance over Unicode code points (exact, O(mn)).
std::size_t levenshtein_distance(std::string_view a, std::string_view b);

/// 1 - d(a, b) / max(|a|, |b|) in code points; 1 when both are empty.
double levenshtein_ratio(std::string_view a, std::string_view b);

struct SurfaceScores {
  double tfidf_cosine = 0;
  double jaccard = 0;
  double levenshtein_ratio = 0;

  bool operator==(const SurfaceScores&) const = default;
};

SurfaceScores surface_profile(const EncounterPair& pair, const IdfTable& idf);

}  // namespace soapbench
