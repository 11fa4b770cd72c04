#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace rollforge::core {

// Append-only JSON Lines file shared by many writers.
class JsonlWriter {
 public:
  explicit JsonlWriter(std::filesystem::path path, bool truncate = false);

  void write(const nlohmann::json& record);
  void write_line(std::string_view line);
  void flush();
  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  std::filesystem::path path_;
  std::mutex mu_;
  std::ofstream out_;
};

struct JsonlReadResult {
  std::vector<nlohmann::json> records;
  std::size_t skipped = 0;  // lines that failed to parse
};

// Reads every parseable line; blank lines are ignored, corrupt ones counted.
JsonlReadResult read_jsonl(const std::filesystem::path& path);

}  // namespace rollforge::core
