#include "soapbench/semantic.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <mutex>

#include <httplib.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "soapbench/error.hpp"
#include "soapbench/surface.hpp"
#include "soapbench/util/append_log.hpp"
#include "soapbench/util/endpoint.hpp"
#include "soapbench/util/hash.hpp"
#include "soapbench/util/text.hpp"

namespace soapbench {

std::vector<float> HashEmbeddingProvider::embed_text(std::string_view text, std::size_t dim) {
  std::vector<float> v(dim, 0.0f);
  if (dim == 0) return v;
  const auto tokens = tokenize(text);
  if (tokens.counts.empty()) {
    v[util::fnv1a64(text) % dim] = 1.0f;
    return v;
  }
  for (const auto& [token, count] : tokens.counts) {
    const std::uint64_t h = util::fnv1a64(token);
    const float sign = (h >> 63) ? -1.0f : 1.0f;
    v[h % dim] += sign * static_cast<float>(count);
  }
  return v;
}

std::vector<float> HashEmbeddingProvider::compute(std::string_view text) {
  return embed_text(text, dim_);
}

HttpEmbeddingProvider::HttpEmbeddingProvider(EmbeddingProviderSpec spec) : spec_(std::move(spec)) {}

std::vector<float> HttpEmbeddingProvider::compute(std::string_view text) {
  const auto endpoint = util::split_endpoint(spec_.endpoint);
  httplib::Client client(endpoint.origin);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(spec_.timeout).count();
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(spec_.timeout).count() % 1000000;
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);

  httplib::Headers headers;
  if (!spec_.credential_env.empty()) {
    const char* key = std::getenv(spec_.credential_env.c_str());
    if (!key || !*key) {
      throw Error(ErrorCode::kProviderUnavailable,
                  spec_.id + ": credential variable " + spec_.credential_env + " is not set");
    }
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }
  nlohmann::json body = {{"model", spec_.model}, {"input", std::string(text)}};
  auto res = client.Post(endpoint.path_prefix + "/embeddings", headers, body.dump(), "application/json");
  if (!res) {
    throw Error(ErrorCode::kProviderUnavailable,
                spec_.id + ": " + httplib::to_string(res.error()));
  }
  if (res->status != 200) {
    throw Error(ErrorCode::kProviderUnavailable,
                spec_.id + ": HTTP " + std::to_string(res->status));
  }
  auto reply = nlohmann::json::parse(res->body, nullptr, false);
  if (reply.is_discarded() || !reply.contains("data") || !reply["data"].is_array() ||
      reply["data"].empty() || !reply["data"][0].contains("embedding")) {
    throw Error(ErrorCode::kProviderUnavailable, spec_.id + ": unexpected response shape");
  }
  std::vector<float> out;
  for (const auto& x : reply["data"][0]["embedding"]) {
    if (!x.is_number()) throw Error(ErrorCode::kProviderUnavailable, spec_.id + ": non-numeric value");
    out.push_back(x.get<float>());
  }
  return out;
}

std::string encode_vector_file(const std::vector<float>& values) {
  std::string out;
  out.reserve(4 + values.size() * 4);
  auto put = [&out](std::uint32_t w) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((w >> (8 * i)) & 0xFF));
  };
  put(static_cast<std::uint32_t>(values.size()));
  for (float f : values) put(std::bit_cast<std::uint32_t>(f));
  return out;
}

std::optional<std::vector<float>> decode_vector_file(std::string_view bytes) {
  auto get = [&bytes](std::size_t at) {
    std::uint32_t w = 0;
    for (int i = 0; i < 4; ++i) {
      w |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[at + i])) << (8 * i);
    }
    return w;
  };
  if (bytes.size() < 4) return std::nullopt;
  const std::uint32_t dim = get(0);
  if (bytes.size() != 4 + static_cast<std::size_t>(dim) * 4) return std::nullopt;
  std::vector<float> values(dim);
  for (std::uint32_t i = 0; i < dim; ++i) values[i] = std::bit_cast<float>(get(4 + 4 * i));
  return values;
}

Embedder::Embedder(EmbeddingProviderSpec spec, std::unique_ptr<EmbeddingProvider> provider,
                   std::optional<std::filesystem::path> cache_dir)
    : spec_(std::move(spec)), provider_(std::move(provider)), cache_dir_(std::move(cache_dir)) {
  if (spec_.dim == 0) throw Error(ErrorCode::kConfigError, spec_.id + ": dim must be positive");
}

std::optional<std::vector<float>> Embedder::load_cached(const std::string& key) {
  {
    std::shared_lock lock(mu_);
    if (auto it = memory_.find(key); it != memory_.end()) return it->second;
  }
  if (!cache_dir_) return std::nullopt;
  const auto file = *cache_dir_ / spec_.id / (key + ".vec");
  std::error_code ec;
  if (!std::filesystem::exists(file, ec)) return std::nullopt;
  auto values = decode_vector_file(util::read_file(file));
  if (!values || values->size() != spec_.dim) {
    spdlog::warn("{}: ignoring unreadable cache entry {}", spec_.id, file.string());
    return std::nullopt;
  }
  std::unique_lock lock(mu_);
  memory_.emplace(key, *values);
  return values;
}

void Embedder::store_cached(const std::string& key, const std::vector<float>& values) {
  {
    std::unique_lock lock(mu_);
    memory_.emplace(key, values);
  }
  if (cache_dir_) {
    util::write_file_atomic(*cache_dir_ / spec_.id / (key + ".vec"), encode_vector_file(values));
  }
}

namespace {

// Longest prefix of at most `limit` bytes that does not split a UTF-8 sequence.
std::string_view truncate_utf8(std::string_view text, std::size_t limit) {
  if (text.size() <= limit) return text;
  std::size_t cut = limit;
  while (cut > 0 && (static_cast<unsigned char>(text[cut]) & 0xC0) == 0x80) --cut;
  return text.substr(0, cut);
}

}  // namespace

EmbeddingVector Embedder::embed(std::string_view text) {
  if (util::trim(text).empty()) throw Error(ErrorCode::kEmptyText, spec_.id + ": text is blank");
  const auto submitted = truncate_utf8(text, spec_.max_input_chars);
  if (submitted.size() != text.size()) {
    spdlog::warn("{}: truncating input from {} to {} bytes", spec_.id, text.size(), submitted.size());
  }
  const auto key = util::sha256_hex(submitted);
  if (auto cached = load_cached(key)) return {spec_.id, std::move(*cached)};

  ++calls_;
  auto values = provider_->compute(submitted);
  if (values.size() != spec_.dim) {
    throw Error(ErrorCode::kDimMismatch, spec_.id + ": provider returned dim " +
                                             std::to_string(values.size()) + ", expected " +
                                             std::to_string(spec_.dim));
  }
  for (float f : values) {
    if (!std::isfinite(f)) throw Error(ErrorCode::kProviderUnavailable, spec_.id + ": non-finite value");
  }
  store_cached(key, values);
  return {spec_.id, std::move(values)};
}

std::unique_ptr<Embedder> make_embedder(const EmbeddingProviderSpec& spec,
                                        std::optional<std::filesystem::path> cache_dir) {
  std::unique_ptr<EmbeddingProvider> provider;
  if (spec.kind == "hash") {
    provider = std::make_unique<HashEmbeddingProvider>(spec.dim);
  } else if (spec.kind == "http") {
    provider = std::make_unique<HttpEmbeddingProvider>(spec);
  } else {
    throw Error(ErrorCode::kConfigError, "unknown provider kind '" + spec.kind + "' for " + spec.id);
  }
  return std::make_unique<Embedder>(spec, std::move(provider), std::move(cache_dir));
}

double cosine(const EmbeddingVector& u, const EmbeddingVector& v) {
  if (u.provider_id != v.provider_id) {
    throw Error(ErrorCode::kProviderMismatch, u.provider_id + " vs " + v.provider_id);
  }
  if (u.dim() != v.dim()) {
    throw Error(ErrorCode::kDimMismatch, std::to_string(u.dim()) + " vs " + std::to_string(v.dim()));
  }
  double dot = 0;
  double uu = 0;
  double vv = 0;
  for (std::size_t i = 0; i < u.dim(); ++i) {
    const double a = u.values[i];
    const double b = v.values[i];
    dot += a * b;
    uu += a * a;
    vv += b * b;
  }
  if (uu == 0.0 || vv == 0.0) throw Error(ErrorCode::kZeroVector, u.provider_id);
  // Symmetric in (u, v) bit for bit.
  return std::clamp(dot / (std::sqrt(uu) * std::sqrt(vv)), -1.0, 1.0);
}

SemanticProfile semantic_profile(const EncounterPair& pair, std::span<Embedder* const> embedders) {
  if (embedders.empty()) throw Error(ErrorCode::kConfigError, "no embedding providers configured");
  SemanticProfile profile;
  for (Embedder* embedder : embedders) {
    const auto& id = embedder->spec().id;
    try {
      const auto a = embedder->embed(pair.machine_note.raw_text);
      const auto b = embedder->embed(pair.clinician_note.raw_text);
      profile.scores[id] = cosine(a, b);
    } catch (const Error& e) {
      profile.failures[id] = e.what();
    }
  }
  if (profile.scores.empty()) {
    std::string reasons;
    for (const auto& [id, why] : profile.failures) reasons += (reasons.empty() ? "" : "; ") + why;
    throw Error(ErrorCode::kAllProvidersFailed, pair.encounter_id + ": " + reasons);
  }
  return profile;
}

}  // namespace soapbench
