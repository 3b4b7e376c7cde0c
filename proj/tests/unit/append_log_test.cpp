#include <gtest/gtest.h>

#include <fstream>

#include "soapbench/error.hpp"
#include "soapbench/util/append_log.hpp"
#include "temp_dir.hpp"

namespace soapbench::util {
namespace {

std::size_t line_count(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  std::string line;
  while (std::getline(in, line)) ++n;
  return n;
}

TEST(AppendLog, AppendsAndReopens) {
  testing::TempDir dir;
  {
    AppendLog log(dir / "sub" / "log.jsonl");
    EXPECT_TRUE(log.open().empty());
    log.append({{"k", 1}});
    log.append({{"k", 2}});
  }
  AppendLog again(dir / "sub" / "log.jsonl");
  const auto records = again.open();
  ASSERT_EQ(records.size(), 2u);
  EXPECT_EQ(records[1]["k"], 2);
  EXPECT_EQ(again.discarded_lines(), 0u);
}

TEST(AppendLog, TornTailIsTruncatedBeforeNewAppends) {
  testing::TempDir dir;
  const auto path = dir / "log.jsonl";
  {
    AppendLog log(path);
    log.open();
    log.append({{"k", 1}});
  }
  {
    std::ofstream out(path, std::ios::app | std::ios::binary);
    out << R"({"k": 2, "trunc)";
  }
  AppendLog log(path);
  const auto records = log.open();
  ASSERT_EQ(records.size(), 1u);
  EXPECT_EQ(log.discarded_lines(), 1u);
  log.append({{"k", 3}});
  AppendLog check(path);
  const auto after = check.open();
  ASSERT_EQ(after.size(), 2u);
  EXPECT_EQ(after[1]["k"], 3);
  EXPECT_EQ(line_count(path), 2u);
}

TEST(AppendLog, UnopenedAppendThrows) {
  testing::TempDir dir;
  AppendLog log(dir / "x.jsonl");
  EXPECT_THROW(log.append({{"k", 1}}), Error);
}

TEST(WriteFileAtomic, ReplacesContentsAndLeavesNoTemp) {
  testing::TempDir dir;
  const auto path = dir / "a" / "file.txt";
  write_file_atomic(path, "one");
  write_file_atomic(path, "two");
  EXPECT_EQ(read_file(path), "two");
  std::size_t entries = 0;
  for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(dir / "a")) ++entries;
  EXPECT_EQ(entries, 1u);
  EXPECT_THROW(read_file(dir / "missing"), Error);
}

}  // namespace
}  // namespace soapbench::util
