#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace rollforge::data {

// One line of a JSON Lines dataset: {id, instruction, response, meta}.
struct DataSample {
  std::string id;
  std::string instruction;
  std::string response;
  nlohmann::json meta = nlohmann::json::object();

  bool operator==(const DataSample&) const = default;
};

void to_json(nlohmann::json& j, const DataSample& s);
void from_json(const nlohmann::json& j, DataSample& s);

struct Dataset {
  std::string name;
  std::vector<DataSample> samples;
  std::size_t skipped_lines = 0;
};

// Missing ids are filled with the line ordinal; duplicate ids are rejected.
Dataset load_dataset(const std::filesystem::path& path);
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);

}  // namespace rollforge::data
