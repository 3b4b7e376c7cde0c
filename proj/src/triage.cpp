#include "soapbench/triage.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstring>

#include <fmt/chrono.h>
#include <fmt/format.h>
#include <httplib.h>
#include <spdlog/spdlog.h>

#include "soapbench/error.hpp"
#include "soapbench/util/hash.hpp"

namespace soapbench {

std::string_view to_string(ReviewCategory category) {
  switch (category) {
    case ReviewCategory::kMachineSuperior: return "machine_superior";
    case ReviewCategory::kClinicianSuperior: return "clinician_superior";
    case ReviewCategory::kSameLowSpecificity: return "same_low_specificity";
    case ReviewCategory::kIndeterminate: return "indeterminate";
  }
  return "?";
}

ReviewCategory review_category_from_string(std::string_view name) {
  for (auto c : kReviewCategories) {
    if (to_string(c) == name) return c;
  }
  throw Error(ErrorCode::kInvalidCategory, "unknown review category '" + std::string(name) + "'");
}

std::string_view to_string(ReviewStatus status) { return status == ReviewStatus::kDone ? "done" : "pending"; }

namespace {

nlohmann::ordered_json context_json(const JudgeContext& c, bool blinded) {
  nlohmann::ordered_json j;
  auto decisions = nlohmann::ordered_json::object();
  for (const auto& [kind, decision] : c.decisions) decisions[kind] = decision;
  j["decisions"] = std::move(decisions);
  if (c.css) {
    if (blinded) {
      // The Difference text names notes in the judge's own A/B order, which
      // is unrelated to the display order.
      j["css"] = {{"similarity", c.css->similarity},
                  {"complexity", c.css->complexity},
                  {"comorbidity", c.css->comorbidity},
                  {"icd_label", c.css->icd_label}};
    } else {
      j["css"] = to_json(*c.css);
    }
  }
  return j;
}

std::string utc_now() {
  const auto now = std::chrono::time_point_cast<std::chrono::seconds>(std::chrono::system_clock::now());
  return fmt::format("{:%Y-%m-%dT%H:%M:%SZ}", fmt::gmtime(std::chrono::system_clock::to_time_t(now)));
}

}  // namespace

ReviewCategory resolve_display_category(const ReviewItem& item, std::string_view name) {
  if (name == "a_superior" || name == "b_superior") {
    const bool machine_is_a = item.display_order == BlindOrder::kMachineFirst;
    const bool machine_wins = (name == "a_superior") == machine_is_a;
    return machine_wins ? ReviewCategory::kMachineSuperior : ReviewCategory::kClinicianSuperior;
  }
  return review_category_from_string(name);
}

nlohmann::ordered_json to_json(const ReviewItem& item) {
  nlohmann::ordered_json j;
  j["encounter_id"] = item.encounter_id;
  j["machine_note"] = item.machine_note;
  j["clinician_note"] = item.clinician_note;
  j["display_order"] = std::string(to_string(item.display_order));
  j["context"] = context_json(item.context, false);
  return j;
}

ReviewItem review_item_from_json(const nlohmann::json& j) {
  try {
    ReviewItem item;
    item.encounter_id = j.at("encounter_id").get<std::string>();
    item.machine_note = j.at("machine_note").get<std::string>();
    item.clinician_note = j.at("clinician_note").get<std::string>();
    const auto order = j.at("display_order").get<std::string>();
    item.display_order = order == to_string(BlindOrder::kClinicianFirst) ? BlindOrder::kClinicianFirst
                                                                          : BlindOrder::kMachineFirst;
    const auto& c = j.value("context", nlohmann::json::object());
    const auto decisions = c.value("decisions", nlohmann::json::object());
    for (const auto& [kind, decision] : decisions.items()) {
      item.context.decisions[kind] = decision.get<std::string>();
    }
    if (c.contains("css")) item.context.css = css_from_json(c["css"]);
    return item;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kMalformedRecord, std::string("review item: ") + e.what());
  }
}

nlohmann::ordered_json blinded_json(const ReviewItem& item) {
  nlohmann::ordered_json j;
  j["encounter_id"] = item.encounter_id;
  j["note_a"] = item.note_a();
  j["note_b"] = item.note_b();
  j["context"] = context_json(item.context, true);
  j["status"] = std::string(to_string(item.status));
  return j;
}

bool ReviewVerdict::same_decision(const ReviewVerdict& o) const {
  return encounter_id == o.encounter_id && reviewer_id == o.reviewer_id && category == o.category &&
         rationale == o.rationale;
}

nlohmann::ordered_json to_json(const ReviewVerdict& v) {
  return {{"encounter_id", v.encounter_id},
          {"category", std::string(to_string(v.category))},
          {"rationale", v.rationale},
          {"reviewer_id", v.reviewer_id},
          {"timestamp", v.timestamp}};
}

ReviewVerdict review_verdict_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error(ErrorCode::kMalformedRecord, "verdict must be an object");
  ReviewVerdict v;
  try {
    v.encounter_id = j.at("encounter_id").get<std::string>();
    const auto category = j.at("category").get<std::string>();
    v.category = review_category_from_string(category);
    v.rationale = j.value("rationale", std::string{});
    v.reviewer_id = j.value("reviewer_id", std::string{"default"});
    v.timestamp = j.value("timestamp", std::string{});
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kMalformedRecord, std::string("verdict: ") + e.what());
  }
  if (v.encounter_id.empty()) throw Error(ErrorCode::kMalformedRecord, "verdict: empty encounter_id");
  if (v.reviewer_id.empty()) throw Error(ErrorCode::kMalformedRecord, "verdict: empty reviewer_id");
  return v;
}

nlohmann::ordered_json to_json(const TriageSummary& s) {
  nlohmann::ordered_json j;
  auto counts = nlohmann::ordered_json::object();
  auto shares = nlohmann::ordered_json::object();
  for (auto c : kReviewCategories) {
    counts[std::string(to_string(c))] = s.counts.at(c);
    shares[std::string(to_string(c))] = s.shares.at(c);
  }
  j["counts"] = std::move(counts);
  j["shares"] = std::move(shares);
  j["reviewed"] = s.reviewed;
  j["pending"] = s.pending;
  return j;
}

TriageSummary summarize_verdicts(std::span<const ReviewVerdict> verdicts, std::size_t pending) {
  TriageSummary s;
  for (auto c : kReviewCategories) s.counts[c] = 0;
  for (const auto& v : verdicts) ++s.counts[v.category];
  s.reviewed = verdicts.size();
  s.pending = pending;
  for (auto c : kReviewCategories) {
    s.shares[c] = s.reviewed == 0 ? 0.0 : static_cast<double>(s.counts[c]) / static_cast<double>(s.reviewed);
  }
  return s;
}

std::vector<ReviewItem> build_queue(const CohortReport& report, const Corpus& corpus, std::uint64_t seed,
                                    std::span<const ConsensusResult> results) {
  std::vector<ReviewItem> items;
  for (const auto& id : report.discordant_ids) {
    const auto* pair = corpus.find(id);
    if (!pair) throw Error(ErrorCode::kUnknownEncounter, id + " is not in the corpus");
    ReviewItem item;
    item.encounter_id = id;
    item.machine_note = pair->machine_note.raw_text;
    item.clinician_note = pair->clinician_note.raw_text;
    const auto bits = util::splitmix64(seed ^ util::fnv1a64(id) ^ 0x7472696167650000ULL);
    item.display_order = (bits & 1) ? BlindOrder::kClinicianFirst : BlindOrder::kMachineFirst;
    for (const auto& r : results) {
      if (r.encounter_id != id) continue;
      if (r.prompt_kind == PromptKind::kCss) {
        item.context.css = r.css;
      } else {
        item.context.decisions[std::string(to_string(r.prompt_kind))] = std::string(to_string(r.decision));
      }
    }
    items.push_back(std::move(item));
  }
  std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return a.encounter_id < b.encounter_id; });
  util::SplitMix64 rng(seed);
  util::deterministic_shuffle(items, rng);
  return items;
}

namespace {

int acquire_lock(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::kIoError, "cannot create " + dir.string() + ": " + ec.message());
  const auto path = dir / TriageStore::kLockFile;
  const int fd = ::open(path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
  if (fd < 0) throw Error(ErrorCode::kIoError, "open " + path.string() + ": " + std::strerror(errno));
  if (::flock(fd, LOCK_EX | LOCK_NB) != 0) {
    ::close(fd);
    throw Error(ErrorCode::kStoreLocked, path.string() + " is held by another process");
  }
  return fd;
}

}  // namespace

void TriageStore::write_queue(const std::filesystem::path& dir, std::span<const ReviewItem> items) {
  const int fd = acquire_lock(dir);
  auto arr = nlohmann::ordered_json::array();
  for (const auto& item : items) arr.push_back(to_json(item));
  try {
    util::write_file_atomic(dir / kQueueFile, nlohmann::ordered_json{{"items", std::move(arr)}}.dump(2) + "\n");
  } catch (...) {
    ::close(fd);
    throw;
  }
  ::close(fd);
}

TriageStore::TriageStore(std::filesystem::path dir) : dir_(std::move(dir)), log_(dir_ / kVerdictLog) {
  if (!std::filesystem::exists(dir_ / kQueueFile)) {
    throw Error(ErrorCode::kMissingReport, "no review queue in " + dir_.string() + "; run the pipeline first");
  }
  lock_fd_ = acquire_lock(dir_);
  try {
    const auto queue = nlohmann::json::parse(util::read_file(dir_ / kQueueFile), nullptr, false);
    if (queue.is_discarded() || !queue.contains("items")) {
      throw Error(ErrorCode::kMalformedRecord, (dir_ / kQueueFile).string() + " is not a review queue");
    }
    for (const auto& j : queue["items"]) {
      index_[j.at("encounter_id").get<std::string>()] = items_.size();
      items_.push_back(review_item_from_json(j));
    }
    for (const auto& record : log_.open()) {
      auto v = review_verdict_from_json(record);
      if (!index_.contains(v.encounter_id)) {
        spdlog::warn("verdict for {} does not match any queued item; kept in the log only", v.encounter_id);
      }
      verdicts_.push_back(std::move(v));
    }
    if (log_.discarded_lines() > 0) {
      spdlog::warn("{}: discarded an incomplete trailing record", log_.path().string());
    }
    write_status();
  } catch (...) {
    ::close(lock_fd_);
    throw;
  }
}

TriageStore::~TriageStore() {
  if (lock_fd_ >= 0) ::close(lock_fd_);
}

bool TriageStore::reviewed_by(const std::string& encounter_id, const std::string& reviewer_id) const {
  return std::any_of(verdicts_.begin(), verdicts_.end(), [&](const auto& v) {
    return v.encounter_id == encounter_id && v.reviewer_id == reviewer_id;
  });
}

std::size_t TriageStore::pending_count(const std::string& reviewer_id) const {
  return static_cast<std::size_t>(std::count_if(items_.begin(), items_.end(), [&](const auto& item) {
    return !reviewed_by(item.encounter_id, reviewer_id);
  }));
}

void TriageStore::write_status() const {
  auto statuses = nlohmann::ordered_json::object();
  for (const auto& item : items_) {
    auto reviewers = nlohmann::ordered_json::array();
    for (const auto& v : verdicts_) {
      if (v.encounter_id == item.encounter_id) reviewers.push_back(v.reviewer_id);
    }
    statuses[item.encounter_id] = {
        {"status", std::string(to_string(reviewers.empty() ? ReviewStatus::kPending : ReviewStatus::kDone))},
        {"reviewers", std::move(reviewers)}};
  }
  const nlohmann::ordered_json snapshot = {
      {"verdicts", verdicts_.size()}, {"items", items_.size()}, {"status", std::move(statuses)}};
  util::write_file_atomic(dir_ / kStatusFile, snapshot.dump(2) + "\n");
}

VerdictAck TriageStore::record_verdict(ReviewVerdict verdict) {
  std::lock_guard lock(mu_);
  if (!index_.contains(verdict.encounter_id)) {
    throw Error(ErrorCode::kUnknownEncounter, verdict.encounter_id + " is not in the review queue");
  }
  for (const auto& existing : verdicts_) {
    if (existing.encounter_id != verdict.encounter_id || existing.reviewer_id != verdict.reviewer_id) continue;
    if (existing.same_decision(verdict)) return {verdict.encounter_id, true, pending_count(verdict.reviewer_id)};
    throw Error(ErrorCode::kAlreadyReviewed, verdict.encounter_id + " was already reviewed by " +
                                                 verdict.reviewer_id + " as " +
                                                 std::string(to_string(existing.category)));
  }
  if (verdict.timestamp.empty()) verdict.timestamp = utc_now();
  log_.append(to_json(verdict));
  verdicts_.push_back(std::move(verdict));
  write_status();
  return {verdicts_.back().encounter_id, false, pending_count(verdicts_.back().reviewer_id)};
}

std::vector<ReviewItem> TriageStore::items() const {
  std::lock_guard lock(mu_);
  auto out = items_;
  for (auto& item : out) {
    const bool any = std::any_of(verdicts_.begin(), verdicts_.end(),
                                 [&](const auto& v) { return v.encounter_id == item.encounter_id; });
    item.status = any ? ReviewStatus::kDone : ReviewStatus::kPending;
  }
  return out;
}

std::vector<ReviewItem> TriageStore::pending(const std::string& reviewer_id) const {
  std::lock_guard lock(mu_);
  std::vector<ReviewItem> out;
  for (const auto& item : items_) {
    if (!reviewed_by(item.encounter_id, reviewer_id)) out.push_back(item);
  }
  return out;
}

std::optional<ReviewItem> TriageStore::item(const std::string& encounter_id, const std::string& reviewer_id) const {
  std::lock_guard lock(mu_);
  const auto it = index_.find(encounter_id);
  if (it == index_.end()) return std::nullopt;
  auto out = items_[it->second];
  out.status = reviewed_by(encounter_id, reviewer_id) ? ReviewStatus::kDone : ReviewStatus::kPending;
  return out;
}

std::vector<ReviewVerdict> TriageStore::verdicts() const {
  std::lock_guard lock(mu_);
  return verdicts_;
}

std::vector<ReviewVerdict> TriageStore::verdicts_for(const std::string& encounter_id) const {
  std::lock_guard lock(mu_);
  std::vector<ReviewVerdict> out;
  for (const auto& v : verdicts_) {
    if (v.encounter_id == encounter_id) out.push_back(v);
  }
  return out;
}

TriageSummary triage_summary(const TriageStore& store, const std::string& reviewer_id) {
  const auto verdicts = store.verdicts();
  return summarize_verdicts(verdicts, store.pending(reviewer_id).size());
}

namespace {

void send_json(httplib::Response& res, int status, const nlohmann::ordered_json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, const Error& e) {
  int status = 400;
  switch (e.code()) {
    case ErrorCode::kUnknownEncounter: status = 404; break;
    case ErrorCode::kAlreadyReviewed: status = 409; break;
    case ErrorCode::kIoError: status = 500; break;
    default: break;
  }
  send_json(res, status, {{"error", std::string(error_name(e.code()))}, {"message", e.what()}});
}

std::string reviewer_of(const httplib::Request& req) {
  auto id = req.get_param_value("reviewer");
  return id.empty() ? "default" : id;
}

}  // namespace

TriageServer::TriageServer(TriageStore& store) : store_(store), server_(std::make_unique<httplib::Server>()) {
  auto& srv = *server_;
  // httplib's default also sets SO_REUSEPORT, which would let two servers
  // share a port silently.
  srv.set_socket_options([](socket_t sock) {
    int yes = 1;
    ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
  });
  srv.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                           {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                           {"Access-Control-Allow-Headers", "Content-Type"}});
  srv.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  srv.Get("/queue", [this](const httplib::Request& req, httplib::Response& res) {
    auto items = nlohmann::ordered_json::array();
    for (const auto& item : store_.pending(reviewer_of(req))) items.push_back(blinded_json(item));
    send_json(res, 200, {{"items", std::move(items)}});
  });

  srv.Get(R"(/item/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    const auto reviewer = reviewer_of(req);
    const auto item = store_.item(id, reviewer);
    if (!item) {
      send_error(res, Error(ErrorCode::kUnknownEncounter, id + " is not in the review queue"));
      return;
    }
    auto body = blinded_json(*item);
    if (item->status == ReviewStatus::kDone) {
      auto verdicts = nlohmann::ordered_json::array();
      for (const auto& v : store_.verdicts_for(id)) {
        if (v.reviewer_id == reviewer) verdicts.push_back(to_json(v));
      }
      body["verdicts"] = std::move(verdicts);
    }
    send_json(res, 200, body);
  });

  srv.Post("/verdict", [this](const httplib::Request& req, httplib::Response& res) {
    auto body = nlohmann::json::parse(req.body, nullptr, false);
    if (body.is_discarded() || !body.is_object()) {
      send_error(res, Error(ErrorCode::kMalformedRecord, "request body is not a JSON object"));
      return;
    }
    try {
      if (body.contains("category") && body["category"].is_string() && body.contains("encounter_id") &&
          body["encounter_id"].is_string()) {
        const auto category = body["category"].get<std::string>();
        if (category == "a_superior" || category == "b_superior") {
          const auto id = body["encounter_id"].get<std::string>();
          const auto item = store_.item(id);
          if (!item) throw Error(ErrorCode::kUnknownEncounter, id + " is not in the review queue");
          body["category"] = std::string(to_string(resolve_display_category(*item, category)));
        }
      }
      auto verdict = review_verdict_from_json(body);
      const auto ack = store_.record_verdict(verdict);
      send_json(res, 200, {{"encounter_id", ack.encounter_id}, {"duplicate", ack.duplicate}, {"pending", ack.pending}});
    } catch (const Error& e) {
      if (e.code() == ErrorCode::kAlreadyReviewed) {
        nlohmann::ordered_json out = {{"error", std::string(error_name(e.code()))}, {"message", e.what()}};
        const auto reviewer = body.value("reviewer_id", std::string{"default"});
        for (const auto& v : store_.verdicts_for(body.value("encounter_id", std::string{}))) {
          if (v.reviewer_id == reviewer) out["existing"] = to_json(v);
        }
        send_json(res, 409, out);
        return;
      }
      send_error(res, e);
    }
  });

  srv.Get("/summary", [this](const httplib::Request& req, httplib::Response& res) {
    send_json(res, 200, to_json(triage_summary(store_, reviewer_of(req))));
  });

  srv.Get("/export", [this](const httplib::Request&, httplib::Response& res) {
    auto verdicts = nlohmann::ordered_json::array();
    for (const auto& v : store_.verdicts()) verdicts.push_back(to_json(v));
    send_json(res, 200, {{"verdicts", std::move(verdicts)}});
  });

  srv.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    try {
      std::rethrow_exception(ep);
    } catch (const Error& e) {
      send_error(res, e);
    } catch (const std::exception& e) {
      send_json(res, 500, {{"error", "InternalError"}, {"message", e.what()}});
    }
  });
}

TriageServer::~TriageServer() { stop(); }

void TriageServer::bind(const std::string& host, int port) {
  if (port == 0) {
    port_ = server_->bind_to_any_port(host);
  } else {
    port_ = server_->bind_to_port(host, port) ? port : -1;
  }
  if (port_ <= 0) {
    throw Error(ErrorCode::kPortInUse, fmt::format("cannot bind {}:{}", host, port));
  }
}

void TriageServer::start(const std::string& host, int port) {
  bind(host, port);
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
}

void TriageServer::run(const std::string& host, int port) {
  bind(host, port);
  server_->listen_after_bind();
}

void TriageServer::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace soapbench
