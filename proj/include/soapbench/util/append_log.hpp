#pragma once

#include <filesystem>
#include <mutex>
#include <string>
#include <vector>

#include <json.hpp>

namespace soapbench::util {

// Append-only JSON-lines file. Each append is one write(2) of a complete line
// followed by fsync, so a crash leaves at most a torn final line. open()
// discards such a tail before the first new append.
class AppendLog {
 public:
  explicit AppendLog(std::filesystem::path path);
  ~AppendLog();

  AppendLog(const AppendLog&) = delete;
  AppendLog& operator=(const AppendLog&) = delete;

  /// Reads every intact record and truncates any torn tail.
  std::vector<nlohmann::json> open();

  void append(const nlohmann::json& record);

  const std::filesystem::path& path() const noexcept { return path_; }
  std::size_t discarded_lines() const noexcept { return discarded_; }

 private:
  std::filesystem::path path_;
  int fd_ = -1;
  std::size_t discarded_ = 0;
  std::mutex mu_;
};

/// Replaces `path` with `contents` via a temp file and rename.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

std::string read_file(const std::filesystem::path& path);

}  // namespace soapbench::util
