#pragma once

#include <atomic>
#include <chrono>
#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "soapbench/note.hpp"

namespace soapbench {

struct EmbeddingVector {
  std::string provider_id;
  std::vector<float> values;

  std::size_t dim() const noexcept { return values.size(); }
  bool operator==(const EmbeddingVector&) const = default;
};

struct EmbeddingProviderSpec {
  std::string id;
  std::string kind = "hash";  // "hash" (offline, deterministic) or "http"
  std::string endpoint;       // http: base URL, e.g. https://api.openai.com/v1
  std::string model;
  std::string credential_env;  // name of the env var holding the API key
  std::size_t dim = 16;
  std::chrono::milliseconds timeout{30000};
  std::size_t max_batch = 16;
  std::size_t max_input_chars = 32768;
};

// Raw vector source behind an Embedder. Implementations need not validate
// dimensions or cache; Embedder does both.
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::vector<float> compute(std::string_view text) = 0;
};

// Feature-hashing embedding used for offline runs and tests. For every
// distinct token t (see tokenize) with count c, h = FNV-1a-64(t) adds
// c * (bit 63 of h ? -1 : +1) to component h mod dim. Text without tokens
// sets component FNV-1a-64(text) mod dim to 1. Values are small integers, so
// results are bit-identical on every platform.
class HashEmbeddingProvider final : public EmbeddingProvider {
 public:
  explicit HashEmbeddingProvider(std::size_t dim) : dim_(dim) {}
  std::vector<float> compute(std::string_view text) override;

  static std::vector<float> embed_text(std::string_view text, std::size_t dim);

 private:
  std::size_t dim_;
};

// OpenAI-compatible POST {endpoint}/embeddings.
class HttpEmbeddingProvider final : public EmbeddingProvider {
 public:
  explicit HttpEmbeddingProvider(EmbeddingProviderSpec spec);
  std::vector<float> compute(std::string_view text) override;

 private:
  EmbeddingProviderSpec spec_;
};

// Validating, caching front end for one provider. Safe for concurrent use.
// The cache is keyed by (provider id, SHA-256 of the submitted text) and is
// mirrored to `cache_dir/<provider id>/<hash>.vec` when a directory is given:
// uint32 dim followed by dim float32 values, all little-endian.
class Embedder {
 public:
  Embedder(EmbeddingProviderSpec spec, std::unique_ptr<EmbeddingProvider> provider,
           std::optional<std::filesystem::path> cache_dir = std::nullopt);

  /// Throws kEmptyText, kDimMismatch, kProviderUnavailable.
  EmbeddingVector embed(std::string_view text);

  const EmbeddingProviderSpec& spec() const noexcept { return spec_; }
  std::size_t provider_calls() const noexcept { return calls_.load(); }

 private:
  std::optional<std::vector<float>> load_cached(const std::string& key);
  void store_cached(const std::string& key, const std::vector<float>& values);

  EmbeddingProviderSpec spec_;
  std::unique_ptr<EmbeddingProvider> provider_;
  std::optional<std::filesystem::path> cache_dir_;
  std::shared_mutex mu_;
  std::unordered_map<std::string, std::vector<float>> memory_;
  std::atomic<std::size_t> calls_{0};
};

std::unique_ptr<Embedder> make_embedder(const EmbeddingProviderSpec& spec,
                                        std::optional<std::filesystem::path> cache_dir = std::nullopt);

/// Reads/writes the binary vector cache format.
std::string encode_vector_file(const std::vector<float>& values);
std::optional<std::vector<float>> decode_vector_file(std::string_view bytes);

/// dot(u, v) / (|u| |v|) clamped to [-1, 1]. Throws kZeroVector,
/// kDimMismatch, kProviderMismatch.
double cosine(const EmbeddingVector& u, const EmbeddingVector& v);

struct SemanticProfile {
  std::map<std::string, double> scores;         // provider id -> cosine
  std::map<std::string, std::string> failures;  // provider id -> reason

  bool operator==(const SemanticProfile&) const = default;
};

/// One cosine per provider over the pair's raw texts. A provider failure is
/// recorded and does not affect the others; throws kAllProvidersFailed only
/// when none succeeds.
SemanticProfile semantic_profile(const EncounterPair& pair, std::span<Embedder* const> embedders);

}  // namespace soapbench
