#include "soapbench/checkpoint.hpp"

#include <spdlog/spdlog.h>

namespace soapbench {

CheckpointStore::CheckpointStore(std::filesystem::path path) : log_(std::move(path)) {
  for (const auto& j : log_.open()) {
    try {
      records_.push_back(verdict_from_json(j));
    } catch (const std::exception& e) {
      spdlog::warn("checkpoint {}: skipping unreadable record: {}", log_.path().string(), e.what());
      continue;
    }
    const auto& v = records_.back();
    if (!v.backend_failed()) {
      completed_.try_emplace(Key{v.encounter_id, v.prompt_kind, v.run_index, v.attempt}, records_.size() - 1);
    }
  }
  discarded_ = log_.discarded_lines();
  if (discarded_ > 0) {
    spdlog::warn("checkpoint {}: dropped {} torn trailing line(s)", log_.path().string(), discarded_);
  }
}

std::optional<JudgeVerdict> CheckpointStore::find(const std::string& encounter_id, PromptKind kind,
                                                  std::uint32_t run_index, std::uint32_t attempt) const {
  std::lock_guard lock(mu_);
  const auto it = completed_.find(Key{encounter_id, kind, run_index, attempt});
  if (it == completed_.end()) return std::nullopt;
  return records_[it->second];
}

void CheckpointStore::append(const JudgeVerdict& verdict) {
  std::lock_guard lock(mu_);
  log_.append(to_json(verdict));
  records_.push_back(verdict);
  if (!verdict.backend_failed()) {
    completed_.try_emplace(Key{verdict.encounter_id, verdict.prompt_kind, verdict.run_index, verdict.attempt},
                           records_.size() - 1);
  }
}

std::vector<JudgeVerdict> CheckpointStore::records() const {
  std::lock_guard lock(mu_);
  return records_;
}

std::size_t CheckpointStore::size() const {
  std::lock_guard lock(mu_);
  return records_.size();
}

}  // namespace soapbench
