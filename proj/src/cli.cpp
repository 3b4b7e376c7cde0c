#include "soapbench/cli.hpp"

#include <signal.h>

#include <algorithm>
#include <cstdlib>
#include <iostream>
#include <mutex>
#include <set>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "soapbench/analytics.hpp"
#include "soapbench/backend.hpp"
#include "soapbench/checkpoint.hpp"
#include "soapbench/consensus.hpp"
#include "soapbench/error.hpp"
#include "soapbench/note.hpp"
#include "soapbench/surface.hpp"
#include "soapbench/triage.hpp"
#include "soapbench/util/append_log.hpp"
#include "soapbench/util/hash.hpp"
#include "soapbench/util/parallel.hpp"
#include "soapbench/util/text.hpp"

#ifndef SOAPBENCH_VERSION
#define SOAPBENCH_VERSION "0.0.0"
#endif

namespace soapbench {

std::string_view version() { return SOAPBENCH_VERSION; }

namespace {

[[noreturn]] void config_error(const std::string& msg) { throw Error(ErrorCode::kConfigError, msg); }

std::vector<PromptKind> parse_prompts(const std::vector<std::string>& names) {
  std::vector<PromptKind> out;
  for (const auto& raw : names) {
    const auto name = util::trim(raw);
    if (name.empty()) continue;
    const auto kind = prompt_kind_from_string(name);
    if (!kind) config_error("unknown prompt kind '" + std::string(name) + "'");
    out.push_back(*kind);
  }
  return out;
}

std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  for (auto part : util::split(s, ',')) {
    const auto t = util::trim(part);
    if (!t.empty()) out.emplace_back(t);
  }
  return out;
}

template <typename T>
T parse_number(std::string_view what, std::string_view text) {
  const std::string s(util::trim(text));
  try {
    std::size_t used = 0;
    const auto v = std::stoull(s, &used);
    if (used != s.size() || s.empty() || s.front() == '-') throw std::invalid_argument(s);
    if (v > static_cast<unsigned long long>(std::numeric_limits<T>::max())) throw std::out_of_range(s);
    return static_cast<T>(v);
  } catch (const std::exception&) {
    config_error(fmt::format("{}: '{}' is not a valid non-negative integer", what, s));
  }
}

std::optional<std::size_t> hash_dim(std::string_view id) {
  if (!util::istarts_with(id, "hash") || id.size() == 4) return std::nullopt;
  const auto digits = id.substr(4);
  if (!std::all_of(digits.begin(), digits.end(), [](char c) { return c >= '0' && c <= '9'; })) return std::nullopt;
  return parse_number<std::size_t>("provider dimension", digits);
}

bool looks_secret(std::string_view key) {
  const auto k = util::to_lower(key);
  for (const char* word : {"api_key", "apikey", "secret", "token", "password"}) {
    if (k.find(word) != std::string::npos) return true;
  }
  return false;
}

EmbeddingProviderSpec provider_from_json(const nlohmann::json& j) {
  EmbeddingProviderSpec spec;
  for (const auto& [key, value] : j.items()) {
    if (looks_secret(key)) config_error("provider key '" + key + "': credentials are read only from the environment");
    if (key == "id") {
      spec.id = value.get<std::string>();
    } else if (key == "kind") {
      spec.kind = value.get<std::string>();
    } else if (key == "endpoint") {
      spec.endpoint = value.get<std::string>();
    } else if (key == "model") {
      spec.model = value.get<std::string>();
    } else if (key == "credential_env") {
      spec.credential_env = value.get<std::string>();
    } else if (key == "dim") {
      spec.dim = value.get<std::size_t>();
    } else if (key == "timeout_ms") {
      spec.timeout = std::chrono::milliseconds(value.get<long>());
    } else if (key == "max_input_chars") {
      spec.max_input_chars = value.get<std::size_t>();
    } else {
      config_error("unknown provider key '" + key + "'");
    }
  }
  if (spec.id.empty()) config_error("provider definition without an id");
  return spec;
}

}  // namespace

void validate(const RunConfig& c) {
  if (c.runs == 0 || c.runs % 2 == 0) config_error(fmt::format("runs must be odd and >= 1, got {}", c.runs));
  if (c.parallelism == 0) config_error("parallelism must be >= 1");
  if (c.backend != "scripted" && c.backend != "http") config_error("backend must be 'scripted' or 'http'");
  if (c.prompts.empty()) config_error("no prompt kinds enabled");
  if (std::set<PromptKind>(c.prompts.begin(), c.prompts.end()).size() != c.prompts.size()) {
    config_error("prompt kinds listed twice");
  }
  if (c.providers.empty()) config_error("no embedding providers configured");
  if (c.port < 0 || c.port > 65535) config_error(fmt::format("port {} out of range", c.port));
  if (c.out.empty()) config_error("no output directory given (--out)");
}

nlohmann::ordered_json to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["corpus"] = c.corpus.string();
  j["out"] = c.out.string();
  j["backend"] = c.backend;
  j["script"] = c.script.string();
  j["endpoint"] = c.endpoint;
  j["credential_env"] = c.credential_env;
  j["model"] = c.model;
  j["runs"] = c.runs;
  j["seed"] = c.seed;
  j["providers"] = c.providers;
  auto specs = nlohmann::ordered_json::array();
  for (const auto& s : c.provider_specs) {
    specs.push_back({{"id", s.id},
                     {"kind", s.kind},
                     {"endpoint", s.endpoint},
                     {"model", s.model},
                     {"credential_env", s.credential_env},
                     {"dim", s.dim},
                     {"timeout_ms", s.timeout.count()},
                     {"max_input_chars", s.max_input_chars}});
  }
  j["provider_specs"] = std::move(specs);
  j["parallelism"] = c.parallelism;
  auto prompts = nlohmann::ordered_json::array();
  for (auto k : c.prompts) prompts.push_back(std::string(to_string(k)));
  j["prompts"] = std::move(prompts);
  j["host"] = c.host;
  j["port"] = c.port;
  return j;
}

RunConfig apply_config_json(RunConfig c, const nlohmann::json& j) {
  if (!j.is_object()) config_error("config file must hold a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (looks_secret(key)) config_error("config key '" + key + "': credentials are read only from the environment");
      if (key == "corpus") {
        c.corpus = value.get<std::string>();
      } else if (key == "out") {
        c.out = value.get<std::string>();
      } else if (key == "backend") {
        c.backend = value.get<std::string>();
      } else if (key == "script") {
        c.script = value.get<std::string>();
      } else if (key == "endpoint") {
        c.endpoint = value.get<std::string>();
      } else if (key == "credential_env") {
        c.credential_env = value.get<std::string>();
      } else if (key == "model") {
        c.model = value.get<std::string>();
      } else if (key == "runs") {
        c.runs = value.get<std::uint32_t>();
      } else if (key == "seed") {
        c.seed = value.get<std::uint64_t>();
      } else if (key == "providers") {
        c.providers.clear();
        for (const auto& p : value) {
          if (p.is_string()) {
            c.providers.push_back(p.get<std::string>());
          } else {
            auto spec = provider_from_json(p);
            c.providers.push_back(spec.id);
            std::erase_if(c.provider_specs, [&](const auto& s) { return s.id == spec.id; });
            c.provider_specs.push_back(std::move(spec));
          }
        }
      } else if (key == "parallelism") {
        c.parallelism = value.get<std::size_t>();
      } else if (key == "prompts") {
        c.prompts = parse_prompts(value.get<std::vector<std::string>>());
      } else if (key == "host") {
        c.host = value.get<std::string>();
      } else if (key == "port") {
        c.port = value.get<int>();
      } else {
        config_error("unknown config key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    config_error(std::string("config file: ") + e.what());
  }
  return c;
}

RunConfig apply_environment(RunConfig c, const std::function<const char*(const char*)>& getenv) {
  auto get = [&](const char* name) -> std::optional<std::string> {
    const char* v = getenv(name);
    if (!v || !*v) return std::nullopt;
    return std::string(v);
  };
  if (auto v = get("SOAPBENCH_CORPUS")) c.corpus = *v;
  if (auto v = get("SOAPBENCH_OUT")) c.out = *v;
  if (auto v = get("SOAPBENCH_BACKEND")) c.backend = *v;
  if (auto v = get("SOAPBENCH_SCRIPT")) c.script = *v;
  if (auto v = get("SOAPBENCH_ENDPOINT")) c.endpoint = *v;
  if (auto v = get("SOAPBENCH_MODEL")) c.model = *v;
  if (auto v = get("SOAPBENCH_RUNS")) c.runs = parse_number<std::uint32_t>("SOAPBENCH_RUNS", *v);
  if (auto v = get("SOAPBENCH_SEED")) c.seed = parse_number<std::uint64_t>("SOAPBENCH_SEED", *v);
  if (auto v = get("SOAPBENCH_PROVIDERS")) c.providers = split_list(*v);
  if (auto v = get("SOAPBENCH_PARALLELISM")) {
    c.parallelism = parse_number<std::size_t>("SOAPBENCH_PARALLELISM", *v);
  }
  if (auto v = get("SOAPBENCH_PROMPTS")) c.prompts = parse_prompts(split_list(*v));
  if (auto v = get("SOAPBENCH_HOST")) c.host = *v;
  if (auto v = get("SOAPBENCH_PORT")) c.port = static_cast<int>(parse_number<std::uint16_t>("SOAPBENCH_PORT", *v));
  return c;
}

std::vector<EmbeddingProviderSpec> resolve_providers(const RunConfig& config) {
  std::vector<EmbeddingProviderSpec> out;
  for (const auto& id : config.providers) {
    const auto defined = std::find_if(config.provider_specs.begin(), config.provider_specs.end(),
                                      [&](const auto& s) { return s.id == id; });
    if (defined != config.provider_specs.end()) {
      out.push_back(*defined);
    } else if (const auto dim = hash_dim(id)) {
      if (*dim == 0) config_error("provider '" + id + "' has dimension 0");
      EmbeddingProviderSpec spec;
      spec.id = id;
      spec.kind = "hash";
      spec.dim = *dim;
      out.push_back(spec);
    } else {
      config_error("unknown embedding provider '" + id + "'");
    }
  }
  return out;
}

namespace {

Corpus load_input(const RunConfig& config) {
  if (config.corpus.empty()) config_error("no corpus given (--corpus)");
  try {
    return load_corpus(config.corpus);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kIoError) config_error("corpus " + config.corpus.string() + " is not readable");
    throw;
  }
}

void prepare_out(const std::filesystem::path& out) {
  std::error_code ec;
  std::filesystem::create_directories(out, ec);
  if (ec) config_error("cannot create output directory " + out.string() + ": " + ec.message());
  const auto probe = out / ".write-probe";
  try {
    util::write_file_atomic(probe, "");
  } catch (const Error&) {
    config_error("output directory " + out.string() + " is not writable");
  }
  std::filesystem::remove(probe, ec);
}

std::unique_ptr<JudgeBackend> make_backend(const RunConfig& config) {
  if (config.backend == "scripted") {
    if (config.script.empty()) config_error("the scripted backend needs --script");
    try {
      return ScriptedBackend::from_file(config.script);
    } catch (const Error& e) {
      config_error("scripted backend: " + std::string(e.what()));
    }
  }
  HttpBackendOptions options;
  options.endpoint = config.endpoint;
  options.credential_env = config.credential_env;
  return std::make_unique<HttpChatBackend>(options);
}

struct MetricFailure {
  std::string encounter_id;
  std::string provider;
  std::string reason;
};

std::vector<SimilarityProfile> compute_profiles(const Corpus& corpus, const RunConfig& config,
                                                std::vector<MetricFailure>& failures) {
  const auto specs = resolve_providers(config);
  std::vector<std::unique_ptr<Embedder>> embedders;
  std::vector<Embedder*> raw;
  for (const auto& spec : specs) {
    embedders.push_back(make_embedder(spec, config.out / kEmbeddingCacheDir));
    raw.push_back(embedders.back().get());
  }
  const auto idf = build_idf(corpus);
  std::vector<SimilarityProfile> profiles(corpus.pairs.size());
  util::parallel_for(corpus.pairs.size(), config.parallelism, [&](std::size_t i) {
    const auto& pair = corpus.pairs[i];
    auto& p = profiles[i];
    p.encounter_id = pair.encounter_id;
    p.surface = surface_profile(pair, idf);
    try {
      p.semantic = semantic_profile(pair, raw);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kAllProvidersFailed) throw;
      for (const auto& spec : specs) p.semantic.failures[spec.id] = e.what();
    }
  });
  for (const auto& p : profiles) {
    for (const auto& [id, why] : p.semantic.failures) failures.push_back({p.encounter_id, id, why});
  }
  return profiles;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<nlohmann::ordered_json>& rows) {
  std::string out;
  for (const auto& r : rows) out += r.dump() + "\n";
  util::write_file_atomic(path, out);
}

std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path) {
  std::vector<nlohmann::json> out;
  const auto text = util::read_file(path);
  std::size_t n = 0;
  for (auto line : util::split(text, '\n')) {
    ++n;
    if (util::trim(line).empty()) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      throw Error(ErrorCode::kMalformedRecord, fmt::format("{}:{}: not valid JSON", path.string(), n));
    }
    out.push_back(std::move(j));
  }
  return out;
}

void write_profiles(const std::filesystem::path& out, const std::vector<SimilarityProfile>& profiles) {
  std::vector<nlohmann::ordered_json> rows;
  for (const auto& p : profiles) rows.push_back(to_json(p));
  write_jsonl(out / kSimilarityFile, rows);
}

std::vector<SimilarityProfile> read_profiles(const std::filesystem::path& out) {
  std::vector<SimilarityProfile> profiles;
  if (!std::filesystem::exists(out / kSimilarityFile)) return profiles;
  for (const auto& j : read_jsonl(out / kSimilarityFile)) profiles.push_back(similarity_from_json(j));
  return profiles;
}

struct Stage {
  std::string command;
  Corpus corpus;
  std::vector<SimilarityProfile> profiles;
  std::vector<MetricFailure> metric_failures;
  std::vector<ConsensusResult> results;
  std::vector<PairFailure> failures;
  bool judged = false;
  std::vector<std::string> outputs;
};

nlohmann::ordered_json build_manifest(const RunConfig& config, const Stage& s) {
  nlohmann::ordered_json m;
  m["tool"] = "soapbench";
  m["version"] = std::string(version());
  m["command"] = s.command;
  m["config"] = to_json(config);
  nlohmann::ordered_json models;
  models["judge"] = {{"backend", config.backend}, {"model", config.model}};
  auto embed = nlohmann::ordered_json::object();
  for (const auto& spec : resolve_providers(config)) {
    embed[spec.id] = spec.kind == "hash" ? fmt::format("hash/{}", spec.dim) : spec.model;
  }
  models["embeddings"] = std::move(embed);
  m["model_ids"] = std::move(models);
  m["seed"] = config.seed;
  std::string corpus_hash;
  try {
    corpus_hash = util::sha256_hex(util::read_file(config.corpus));
  } catch (const Error&) {
  }
  m["corpus"] = {{"path", config.corpus.string()},
                 {"sha256", corpus_hash},
                 {"pairs", s.corpus.pairs.size()},
                 {"excluded", s.corpus.exclusions.size()}};
  auto failed = nlohmann::ordered_json::array();
  for (const auto& f : s.failures) {
    failed.push_back({{"encounter_id", f.encounter_id},
                      {"prompt_kind", std::string(to_string(f.prompt_kind))},
                      {"reason", f.reason}});
  }
  m["failed_pairs"] = std::move(failed);
  auto metric = nlohmann::ordered_json::array();
  for (const auto& f : s.metric_failures) {
    metric.push_back({{"encounter_id", f.encounter_id}, {"provider", f.provider}, {"reason", f.reason}});
  }
  m["metric_failures"] = std::move(metric);
  return m;
}

// Drops every pair with a failed prompt kind and reports the rest.
void report_stage(const RunConfig& config, Stage& s) {
  std::set<std::string> failed;
  for (const auto& f : s.failures) failed.insert(f.encounter_id);
  Corpus reported;
  reported.source_path = s.corpus.source_path;
  for (const auto& pair : s.corpus.pairs) {
    if (!failed.contains(pair.encounter_id)) reported.pairs.push_back(pair);
  }
  if (reported.pairs.empty()) {
    throw Error(ErrorCode::kBackendExhausted, "no pair completed adjudication; see " + std::string(kManifestFile));
  }
  std::vector<ConsensusResult> kept;
  for (const auto& r : s.results) {
    if (!failed.contains(r.encounter_id)) kept.push_back(r);
  }

  auto manifest = build_manifest(config, s);
  manifest["config"].erase("out");
  SummaryOptions options;
  options.required = std::set<PromptKind>(config.prompts.begin(), config.prompts.end());
  auto report = summarize(reported, kept, s.profiles, std::move(manifest), options);
  if (!failed.empty()) {
    report.notes.push_back(fmt::format("{} pair(s) failed adjudication and are excluded", failed.size()));
  }
  for (const auto& path : emit_report(report, config.out)) s.outputs.push_back(path.filename().string());

  if (report.top1) {
    const auto queue = build_queue(report, reported, config.seed, kept);
    TriageStore::write_queue(config.out / kTriageDir, queue);
    s.outputs.push_back(std::string(kTriageDir) + "/" + TriageStore::kQueueFile);
  }
}

void judge_stage(const RunConfig& config, Stage& s) {
  auto backend = make_backend(config);
  CheckpointStore store(config.out / kVerdictsFile);
  if (store.discarded_on_open() > 0) {
    spdlog::warn("{}: dropped {} incomplete record(s) from an interrupted run", store.path().string(),
                 store.discarded_on_open());
  }
  AdjudicationConfig adj;
  adj.consensus.runs = config.runs;
  adj.consensus.seed = config.seed;
  adj.consensus.model_id = config.model;
  adj.kinds = config.prompts;
  adj.parallelism = config.parallelism;
  auto outcome = adjudicate_corpus(s.corpus, *backend, adj, &store);
  s.results = std::move(outcome.results);
  s.failures = std::move(outcome.failures);
  s.judged = true;

  std::vector<nlohmann::ordered_json> rows;
  for (const auto& r : s.results) rows.push_back(to_json(r));
  write_jsonl(config.out / kConsensusFile, rows);
  s.outputs.push_back(kVerdictsFile);
  s.outputs.push_back(kConsensusFile);
}

int finish(const RunConfig& config, Stage& s) {
  auto manifest = build_manifest(config, s);
  std::sort(s.outputs.begin(), s.outputs.end());
  s.outputs.erase(std::unique(s.outputs.begin(), s.outputs.end()), s.outputs.end());
  manifest["outputs"] = s.outputs;
  util::write_file_atomic(config.out / kManifestFile, manifest.dump(2) + "\n");

  const auto failed = std::set<std::string>([&] {
    std::set<std::string> ids;
    for (const auto& f : s.failures) ids.insert(f.encounter_id);
    return ids;
  }());
  if (!failed.empty() || !s.metric_failures.empty()) {
    spdlog::warn("{} pair(s) failed adjudication, {} embedding failure(s); details in {}", failed.size(),
                 s.metric_failures.size(), (config.out / kManifestFile).string());
    return kExitPartial;
  }
  return kExitOk;
}

Stage begin(const RunConfig& config, std::string command) {
  validate(config);
  Stage s;
  s.command = std::move(command);
  s.corpus = load_input(config);
  prepare_out(config.out);
  write_exclusion_log(s.corpus, config.out / kExclusionsFile);
  s.outputs.push_back(kExclusionsFile);
  if (s.corpus.pairs.empty()) throw Error(ErrorCode::kEmptyCorpus, "no usable pairs in " + config.corpus.string());
  return s;
}

// Writes the manifest even when a later stage aborts, then rethrows.
template <typename Fn>
int guarded(const RunConfig& config, Stage& s, Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kConfigError) {
      try {
        finish(config, s);
      } catch (const Error&) {
      }
    }
    throw;
  }
  return finish(config, s);
}

}  // namespace

int cmd_run(const RunConfig& config) {
  auto s = begin(config, "run");
  return guarded(config, s, [&] {
    s.profiles = compute_profiles(s.corpus, config, s.metric_failures);
    write_profiles(config.out, s.profiles);
    s.outputs.push_back(kSimilarityFile);
    judge_stage(config, s);
    report_stage(config, s);
  });
}

int cmd_judge(const RunConfig& config) {
  auto s = begin(config, "judge");
  return guarded(config, s, [&] {
    s.profiles = read_profiles(config.out);
    judge_stage(config, s);
    report_stage(config, s);
  });
}

int cmd_metrics(const RunConfig& config) {
  auto s = begin(config, "metrics");
  return guarded(config, s, [&] {
    s.profiles = compute_profiles(s.corpus, config, s.metric_failures);
    write_profiles(config.out, s.profiles);
    s.outputs.push_back(kSimilarityFile);
  });
}

int cmd_report(const RunConfig& config) {
  auto s = begin(config, "report");
  return guarded(config, s, [&] {
    if (!std::filesystem::exists(config.out / kConsensusFile)) {
      throw Error(ErrorCode::kMissingDecision, "no " + std::string(kConsensusFile) + " in " + config.out.string() +
                                                   "; run judge first");
    }
    s.profiles = read_profiles(config.out);
    for (const auto& j : read_jsonl(config.out / kConsensusFile)) s.results.push_back(consensus_from_json(j));
    std::set<std::pair<std::string, PromptKind>> have;
    for (const auto& r : s.results) have.insert({r.encounter_id, r.prompt_kind});
    for (const auto& pair : s.corpus.pairs) {
      for (auto kind : config.prompts) {
        if (!have.contains({pair.encounter_id, kind})) {
          s.failures.push_back({pair.encounter_id, kind, "no consensus decision on record"});
        }
      }
    }
    report_stage(config, s);
  });
}

namespace {

std::filesystem::path triage_dir(const RunConfig& config) {
  if (config.out.empty()) config_error("no output directory given (--out)");
  return config.out / kTriageDir;
}

void print_item(std::ostream& out, const ReviewItem& item, std::size_t pending) {
  out << fmt::format("Encounter {} ({} pending)\n", item.encounter_id, pending);
  out << "\n----- NOTE A -----\n" << item.note_a() << "\n----- NOTE B -----\n" << item.note_b() << "\n\n";
  std::string judge;
  for (const auto& [kind, decision] : item.context.decisions) {
    judge += fmt::format("{}{}={}", judge.empty() ? "" : ", ", kind, decision);
  }
  if (item.context.css) {
    judge += fmt::format("{}css similarity={} complexity={} icd={}", judge.empty() ? "" : ", ",
                         item.context.css->similarity, item.context.css->complexity, item.context.css->icd_label);
  }
  if (!judge.empty()) out << "Judge: " << judge << "\n";
  out << "Categories: a_superior, b_superior, same_low_specificity, indeterminate\n";
}

}  // namespace

int cmd_triage_next(const RunConfig& config, const std::string& reviewer, std::ostream& out) {
  TriageStore store(triage_dir(config));
  const auto pending = store.pending(reviewer);
  if (pending.empty()) {
    out << fmt::format("No pending items ({} reviewed)\n", store.verdicts().size());
    return kExitOk;
  }
  print_item(out, pending.front(), pending.size());
  return kExitOk;
}

int cmd_triage_verdict(const RunConfig& config, const std::string& encounter_id, const std::string& category,
                       const std::string& rationale, const std::string& reviewer, std::ostream& out) {
  TriageStore store(triage_dir(config));
  const auto item = store.item(encounter_id, reviewer);
  if (!item) throw Error(ErrorCode::kUnknownEncounter, encounter_id + " is not in the review queue");
  ReviewVerdict v;
  v.encounter_id = encounter_id;
  v.category = resolve_display_category(*item, category);
  v.rationale = rationale;
  v.reviewer_id = reviewer;
  const auto ack = store.record_verdict(v);
  out << fmt::format("{} {} ({} pending)\n", ack.duplicate ? "Already recorded:" : "Recorded:", encounter_id,
                     ack.pending);
  return kExitOk;
}

int cmd_triage_summary(const RunConfig& config, const std::string& reviewer, std::ostream& out) {
  TriageStore store(triage_dir(config));
  const auto s = triage_summary(store, reviewer);
  out << fmt::format("Reviewed {}, pending {}\n", s.reviewed, s.pending);
  for (auto c : kReviewCategories) {
    out << fmt::format("  {:<22} {:>4}  {:5.1f}%\n", to_string(c), s.counts.at(c), 100.0 * s.shares.at(c));
  }
  return kExitOk;
}

int cmd_serve(const RunConfig& config) {
  if (config.out.empty()) config_error("no output directory given (--out)");
  if (!std::filesystem::exists(config.out / kReportJson)) {
    throw Error(ErrorCode::kMissingReport, "no " + std::string(kReportJson) + " in " + config.out.string());
  }
  if (!std::filesystem::exists(triage_dir(config) / TriageStore::kQueueFile)) {
    throw Error(ErrorCode::kMissingReport, "the report in " + config.out.string() + " has no review queue");
  }
  TriageStore store(triage_dir(config));

  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);
  struct Unblock {
    sigset_t* set;
    ~Unblock() { pthread_sigmask(SIG_UNBLOCK, set, nullptr); }
  } unblock{&signals};

  TriageServer server(store);
  server.start(config.host, config.port);
  spdlog::info("serving {} review item(s) on http://{}:{}", store.items().size(), config.host, server.port());
  int sig = 0;
  sigwait(&signals, &sig);
  spdlog::info("received signal {}, shutting down", sig);
  server.stop();
  return kExitOk;
}

int run_cli(int argc, const char* const* argv) {
  auto logger = spdlog::get("soapbench");
  if (!logger) logger = spdlog::stderr_color_mt("soapbench");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("%^%l%$: %v");

  CLI::App app{"Agreement benchmark for machine and clinician SOAP notes"};
  app.set_version_flag("--version", std::string(version()));
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_file;
  std::string log_level = "info";
  app.add_option("--config", config_file, "JSON config file (see README)");
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));

  std::string corpus, out, backend, script, model, endpoint, host;
  std::uint32_t runs = 0;
  std::uint64_t seed = 0;
  std::size_t parallelism = 0;
  int port = 0;
  std::vector<std::string> providers, prompts;
  std::vector<CLI::Option*> given;
  auto add_pipeline = [&](CLI::App* sub) {
    given.push_back(sub->add_option("--corpus", corpus, "pair-record JSON-lines file"));
    given.push_back(sub->add_option("--out", out, "output directory"));
    given.push_back(sub->add_option("--backend", backend, "judge backend")->check(CLI::IsMember({"http", "scripted"})));
    given.push_back(sub->add_option("--script", script, "rules file for the scripted backend"));
    given.push_back(sub->add_option("--endpoint", endpoint, "base URL of the chat-completion API"));
    given.push_back(sub->add_option("--model", model, "judge model id"));
    given.push_back(sub->add_option("--runs", runs, "judge runs per prompt (odd)"));
    given.push_back(sub->add_option("--seed", seed, "seed for blinding and queue order"));
    given.push_back(sub->add_option("--providers", providers, "embedding provider ids")->delimiter(','));
    given.push_back(sub->add_option("--parallelism", parallelism, "concurrent pairs"));
    given.push_back(sub->add_option("--prompts", prompts, "prompt kinds: top4,top1,plan,css,hallucination")
                        ->delimiter(','));
  };
  auto* run = app.add_subcommand("run", "metrics, judging and report in one pass");
  auto* judge = app.add_subcommand("judge", "judge and report, reusing stored metrics");
  auto* metrics = app.add_subcommand("metrics", "similarity metrics only");
  auto* report = app.add_subcommand("report", "re-aggregate stored decisions");
  for (auto* sub : {run, judge, metrics, report}) add_pipeline(sub);

  auto* serve = app.add_subcommand("serve", "serve the review API");
  given.push_back(serve->add_option("--out", out, "output directory of a completed run"));
  given.push_back(serve->add_option("--host", host, "bind address"));
  given.push_back(serve->add_option("--port", port, "port (0 picks a free one)"));
  given.push_back(serve->add_option("--seed", seed, "unused; accepted for symmetry"));

  auto* triage = app.add_subcommand("triage", "review discordant pairs from the terminal");
  triage->require_subcommand(1);
  given.push_back(triage->add_option("--out", out, "output directory of a completed run"));
  std::string reviewer = "default";
  triage->add_option("--reviewer", reviewer, "reviewer id");
  auto* next = triage->add_subcommand("next", "show the next pending item");
  auto* verdict = triage->add_subcommand("verdict", "record a verdict");
  std::string encounter_id, category, rationale;
  verdict->add_option("encounter_id", encounter_id)->required();
  verdict
      ->add_option("category", category,
                   "machine_superior, clinician_superior, same_low_specificity, indeterminate, a_superior, b_superior")
      ->required();
  verdict->add_option("--rationale", rationale, "free-text rationale");
  auto* tsummary = triage->add_subcommand("summary", "category counts and shares");
  for (auto* sub : {next, verdict, tsummary}) {
    sub->fallthrough();
    given.push_back(sub->add_option("--out", out, "output directory of a completed run"));
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitFatal;
  }
  spdlog::set_level(spdlog::level::from_str(log_level));

  auto is_given = [&](const char* name) {
    return std::any_of(given.begin(), given.end(), [&](CLI::Option* o) { return o->count() > 0 && o->check_lname(name); });
  };

  try {
    RunConfig config = apply_environment(RunConfig{}, [](const char* n) { return std::getenv(n); });
    if (config_file.empty()) {
      if (const char* env = std::getenv("SOAPBENCH_CONFIG"); env && *env) config_file = env;
    }
    if (!config_file.empty()) {
      std::string text;
      try {
        text = util::read_file(config_file);
      } catch (const Error&) {
        config_error("config file " + config_file + " is not readable");
      }
      const auto j = nlohmann::json::parse(text, nullptr, false);
      if (j.is_discarded()) config_error("config file " + config_file + " is not valid JSON");
      config = apply_config_json(std::move(config), j);
    }
    if (is_given("corpus")) config.corpus = corpus;
    if (is_given("out")) config.out = out;
    if (is_given("backend")) config.backend = backend;
    if (is_given("script")) config.script = script;
    if (is_given("endpoint")) config.endpoint = endpoint;
    if (is_given("model")) config.model = model;
    if (is_given("runs")) config.runs = runs;
    if (is_given("seed")) config.seed = seed;
    if (is_given("providers")) config.providers = providers;
    if (is_given("parallelism")) config.parallelism = parallelism;
    if (is_given("prompts")) config.prompts = parse_prompts(prompts);
    if (is_given("host")) config.host = host;
    if (is_given("port")) config.port = port;

    if (*run) return cmd_run(config);
    if (*judge) return cmd_judge(config);
    if (*metrics) return cmd_metrics(config);
    if (*report) return cmd_report(config);
    if (*serve) return cmd_serve(config);
    if (*next) return cmd_triage_next(config, reviewer, std::cout);
    if (*verdict) return cmd_triage_verdict(config, encounter_id, category, rationale, reviewer, std::cout);
    if (*tsummary) return cmd_triage_summary(config, reviewer, std::cout);
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return kExitFatal;
  } catch (const std::exception& e) {
    spdlog::error("unexpected failure: {}", e.what());
    return kExitFatal;
  }
  return kExitFatal;
}

}  // namespace soapbench
