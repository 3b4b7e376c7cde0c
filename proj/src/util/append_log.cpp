#include "soapbench/util/append_log.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <sstream>

#include "soapbench/error.hpp"

namespace soapbench::util {

namespace {

[[noreturn]] void throw_io(const std::string& what, const std::filesystem::path& path) {
  throw Error(ErrorCode::kIoError, what + " " + path.string() + ": " + std::strerror(errno));
}

void write_all(int fd, std::string_view data, const std::filesystem::path& path) {
  while (!data.empty()) {
    const ssize_t n = ::write(fd, data.data(), data.size());
    if (n < 0) {
      if (errno == EINTR) continue;
      throw_io("write", path);
    }
    data.remove_prefix(static_cast<std::size_t>(n));
  }
}

}  // namespace

AppendLog::AppendLog(std::filesystem::path path) : path_(std::move(path)) {}

AppendLog::~AppendLog() {
  if (fd_ >= 0) ::close(fd_);
}

std::vector<nlohmann::json> AppendLog::open() {
  std::lock_guard lock(mu_);
  std::vector<nlohmann::json> records;
  discarded_ = 0;
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  std::string contents;
  if (std::filesystem::exists(path_)) contents = read_file(path_);

  // Keep the longest prefix made of complete, parseable lines.
  std::size_t good_end = 0;
  std::size_t pos = 0;
  while (pos < contents.size()) {
    const auto nl = contents.find('\n', pos);
    if (nl == std::string::npos) {
      ++discarded_;
      break;
    }
    const std::string_view line(contents.data() + pos, nl - pos);
    if (!line.empty()) {
      auto parsed = nlohmann::json::parse(line, nullptr, false);
      if (parsed.is_discarded()) {
        // A corrupt line in the middle cannot come from a torn append; stop
        // here rather than silently skipping over it.
        ++discarded_;
        break;
      }
      records.push_back(std::move(parsed));
    }
    pos = nl + 1;
    good_end = pos;
  }

  if (fd_ >= 0) ::close(fd_);
  fd_ = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd_ < 0) throw_io("open", path_);
  if (good_end < contents.size()) {
    if (::ftruncate(fd_, static_cast<off_t>(good_end)) != 0) throw_io("truncate", path_);
    ::fsync(fd_);
  }
  return records;
}

void AppendLog::append(const nlohmann::json& record) {
  std::string line = record.dump();
  line.push_back('\n');
  std::lock_guard lock(mu_);
  if (fd_ < 0) throw Error(ErrorCode::kIoError, "append to unopened log " + path_.string());
  write_all(fd_, line, path_);
  if (::fsync(fd_) != 0) throw_io("fsync", path_);
}

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  static std::atomic<unsigned long> counter{0};
  auto tmp = path;
  tmp += ".tmp." + std::to_string(::getpid()) + "." + std::to_string(counter.fetch_add(1));
  const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
  if (fd < 0) throw_io("open", tmp);
  try {
    write_all(fd, contents, tmp);
  } catch (...) {
    ::close(fd);
    throw;
  }
  ::fsync(fd);
  ::close(fd);
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::kIoError, "rename " + tmp.string() + ": " + ec.message());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace soapbench::util
