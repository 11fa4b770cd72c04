#include "rollforge/data/dataset.hpp"

#include <set>

#include "rollforge/core/errors.hpp"
#include "rollforge/core/jsonl.hpp"

namespace rollforge::data {

using nlohmann::json;

void to_json(json& j, const DataSample& s) {
  j = json{{"id", s.id}, {"instruction", s.instruction}, {"response", s.response}, {"meta", s.meta}};
}

void from_json(const json& j, DataSample& s) {
  if (!j.is_object()) throw ValidationError("sample", "expected a JSON object");
  if (j.contains("id")) s.id = j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump();
  s.instruction = j.value("instruction", std::string{});
  s.response = j.value("response", std::string{});
  s.meta = j.value("meta", json::object());
}

Dataset load_dataset(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("dataset not found: " + path.string());
  auto read = core::read_jsonl(path);
  Dataset ds;
  ds.name = path.stem().string();
  ds.skipped_lines = read.skipped;
  std::set<std::string> seen;
  for (std::size_t i = 0; i < read.records.size(); ++i) {
    DataSample s;
    try {
      s = read.records[i].get<DataSample>();
    } catch (const ValidationError&) {
      ++ds.skipped_lines;
      continue;
    }
    if (s.id.empty()) s.id = std::to_string(i);
    if (!seen.insert(s.id).second) throw ValidationError("id", "duplicate sample id '" + s.id + "' in " + path.string());
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  core::JsonlWriter out(path, true);
  for (const auto& s : dataset.samples) out.write(s);
  out.flush();
}

}  // namespace rollforge::data
