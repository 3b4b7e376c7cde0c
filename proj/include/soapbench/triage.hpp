#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "soapbench/analytics.hpp"
#include "soapbench/consensus.hpp"
#include "soapbench/note.hpp"
#include "soapbench/prompts.hpp"
#include "soapbench/util/append_log.hpp"

namespace httplib {
class Server;
}

namespace soapbench {

enum class ReviewCategory { kMachineSuperior, kClinicianSuperior, kSameLowSpecificity, kIndeterminate };

inline constexpr ReviewCategory kReviewCategories[] = {
    ReviewCategory::kMachineSuperior, ReviewCategory::kClinicianSuperior, ReviewCategory::kSameLowSpecificity,
    ReviewCategory::kIndeterminate};

std::string_view to_string(ReviewCategory category);
/// Throws kInvalidCategory.
ReviewCategory review_category_from_string(std::string_view name);

enum class ReviewStatus { kPending, kDone };

std::string_view to_string(ReviewStatus status);

struct JudgeContext {
  std::map<std::string, std::string> decisions;  // prompt kind name -> decision name
  std::optional<CssRecord> css;
};

struct ReviewItem {
  std::string encounter_id;
  std::string machine_note;
  std::string clinician_note;
  BlindOrder display_order = BlindOrder::kMachineFirst;
  JudgeContext context;
  ReviewStatus status = ReviewStatus::kPending;

  const std::string& note_a() const {
    return display_order == BlindOrder::kMachineFirst ? machine_note : clinician_note;
  }
  const std::string& note_b() const {
    return display_order == BlindOrder::kMachineFirst ? clinician_note : machine_note;
  }
};

/// Accepts a canonical category name or the display-relative "a_superior" /
/// "b_superior", resolved through the item's A/B order.
ReviewCategory resolve_display_category(const ReviewItem& item, std::string_view name);

nlohmann::ordered_json to_json(const ReviewItem& item);
ReviewItem review_item_from_json(const nlohmann::json& j);

/// Reviewer-facing view: notes as A and B with no authorship labels.
nlohmann::ordered_json blinded_json(const ReviewItem& item);

struct ReviewVerdict {
  std::string encounter_id;
  ReviewCategory category = ReviewCategory::kIndeterminate;
  std::string rationale;
  std::string reviewer_id = "default";
  std::string timestamp;  // ISO-8601 UTC; filled on record when empty

  /// Same encounter, reviewer, category and rationale.
  bool same_decision(const ReviewVerdict& other) const;
};

nlohmann::ordered_json to_json(const ReviewVerdict& v);
/// Throws kMalformedRecord or kInvalidCategory.
ReviewVerdict review_verdict_from_json(const nlohmann::json& j);

struct TriageSummary {
  std::map<ReviewCategory, std::size_t> counts;
  std::map<ReviewCategory, double> shares;  // 0 for every category when nothing is reviewed
  std::size_t reviewed = 0;
  std::size_t pending = 0;
};

nlohmann::ordered_json to_json(const TriageSummary& s);

/// Shares over reviewed verdicts.
TriageSummary summarize_verdicts(std::span<const ReviewVerdict> verdicts, std::size_t pending = 0);

/// One item per discordant encounter, in seeded-random order with a seeded
/// A/B display order. Judge context is taken from `results` when given.
/// Throws kUnknownEncounter.
std::vector<ReviewItem> build_queue(const CohortReport& report, const Corpus& corpus, std::uint64_t seed,
                                    std::span<const ConsensusResult> results = {});

struct VerdictAck {
  std::string encounter_id;
  bool duplicate = false;
  std::size_t pending = 0;
};

// Review state in one directory: queue.json (the items), review_verdicts.jsonl
// (append-only verdict log), review_status.json (derived snapshot) and
// triage.lock, held for the lifetime of the store.
class TriageStore {
 public:
  static constexpr const char* kQueueFile = "queue.json";
  static constexpr const char* kVerdictLog = "review_verdicts.jsonl";
  static constexpr const char* kStatusFile = "review_status.json";
  static constexpr const char* kLockFile = "triage.lock";

  /// Writes a fresh queue file, replacing any previous one. Existing verdicts
  /// are kept. Throws kStoreLocked if another process holds the store.
  static void write_queue(const std::filesystem::path& dir, std::span<const ReviewItem> items);

  /// Opens an existing store and replays its verdict log. Throws
  /// kMissingReport when there is no queue file and kStoreLocked when the
  /// lock is held elsewhere.
  explicit TriageStore(std::filesystem::path dir);
  ~TriageStore();

  TriageStore(const TriageStore&) = delete;
  TriageStore& operator=(const TriageStore&) = delete;

  /// Throws kUnknownEncounter or kAlreadyReviewed.
  VerdictAck record_verdict(ReviewVerdict verdict);

  std::vector<ReviewItem> items() const;
  std::vector<ReviewItem> pending(const std::string& reviewer_id = "default") const;
  std::optional<ReviewItem> item(const std::string& encounter_id, const std::string& reviewer_id = "default") const;
  std::vector<ReviewVerdict> verdicts() const;
  std::vector<ReviewVerdict> verdicts_for(const std::string& encounter_id) const;
  std::size_t discarded_on_open() const noexcept { return log_.discarded_lines(); }
  const std::filesystem::path& dir() const noexcept { return dir_; }

 private:
  bool reviewed_by(const std::string& encounter_id, const std::string& reviewer_id) const;
  std::size_t pending_count(const std::string& reviewer_id) const;
  void write_status() const;

  std::filesystem::path dir_;
  int lock_fd_ = -1;
  util::AppendLog log_;
  mutable std::mutex mu_;
  std::vector<ReviewItem> items_;
  std::map<std::string, std::size_t> index_;
  std::vector<ReviewVerdict> verdicts_;
};

/// Counts over every recorded verdict; pending counts items without a
/// verdict from `reviewer_id`.
TriageSummary triage_summary(const TriageStore& store, const std::string& reviewer_id = "default");

// Local HTTP API over a TriageStore.
//   GET  /queue[?reviewer=ID]    {"items": [blinded item, ...]} pending items
//   GET  /item/{id}[?reviewer=]  blinded item, plus "verdicts" once reviewed
//   POST /verdict                ReviewVerdict JSON; category may also be
//                                "a_superior" or "b_superior"
//   GET  /summary                TriageSummary
//   GET  /export                 {"verdicts": [...]} the full verdict log
// Errors are {"error": code name, "message": text} with 400, 404 or 409; a
// 409 carries the stored verdict under "existing".
class TriageServer {
 public:
  explicit TriageServer(TriageStore& store);
  ~TriageServer();

  /// Binds and serves on a background thread. Port 0 picks a free port.
  /// Throws kPortInUse.
  void start(const std::string& host, int port);
  /// Binds and serves on the calling thread until stop().
  void run(const std::string& host, int port);
  void stop();
  int port() const noexcept { return port_; }

 private:
  void bind(const std::string& host, int port);

  TriageStore& store_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = 0;
};

}  // namespace soapbench
