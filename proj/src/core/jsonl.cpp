#include "rollforge/core/jsonl.hpp"

#include "rollforge/core/errors.hpp"

namespace rollforge::core {

JsonlWriter::JsonlWriter(std::filesystem::path path, bool truncate) : path_(std::move(path)) {
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  out_.open(path_, truncate ? std::ios::out | std::ios::trunc : std::ios::out | std::ios::app);
  if (!out_) throw Error("cannot open " + path_.string() + " for writing");
}

void JsonlWriter::write(const nlohmann::json& record) { write_line(record.dump()); }

void JsonlWriter::write_line(std::string_view line) {
  std::lock_guard lock(mu_);
  out_ << line << '\n';
  if (!out_) throw Error("write to " + path_.string() + " failed");
}

void JsonlWriter::flush() {
  std::lock_guard lock(mu_);
  out_.flush();
}

JsonlReadResult read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  JsonlReadResult result;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      result.records.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::parse_error&) {
      ++result.skipped;
    }
  }
  return result;
}

}  // namespace rollforge::core
