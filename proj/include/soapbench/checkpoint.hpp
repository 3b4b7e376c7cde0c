#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "soapbench/util/append_log.hpp"
#include "soapbench/verdict.hpp"

namespace soapbench {

// Append-only audit log of every backend call, doubling as the resume
// checkpoint. Keyed by (encounter, kind, run, attempt); writes are
// serialized through one file descriptor.
class CheckpointStore {
 public:
  explicit CheckpointStore(std::filesystem::path path);

  /// The stored verdict for a call, if one completed. Calls whose backend
  /// request failed are not returned, so a resumed run retries them.
  std::optional<JudgeVerdict> find(const std::string& encounter_id, PromptKind kind,
                                   std::uint32_t run_index, std::uint32_t attempt) const;

  void append(const JudgeVerdict& verdict);

  std::vector<JudgeVerdict> records() const;
  std::size_t size() const;
  std::size_t discarded_on_open() const noexcept { return discarded_; }
  const std::filesystem::path& path() const noexcept { return log_.path(); }

 private:
  using Key = std::tuple<std::string, PromptKind, std::uint32_t, std::uint32_t>;

  util::AppendLog log_;
  mutable std::mutex mu_;
  std::vector<JudgeVerdict> records_;
  std::map<Key, std::size_t> completed_;
  std::size_t discarded_ = 0;
};

}  // namespace soapbench
