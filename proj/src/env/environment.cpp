#include "rollforge/env/environment.hpp"

namespace rollforge::env {

using nlohmann::json;

void to_json(json& j, const ResetResult& r) {
  j = json{{"observation_ref", r.observation_ref}, {"observation", r.observation}, {"actions", r.actions}};
}

void from_json(const json& j, ResetResult& r) {
  r.observation_ref = j.at("observation_ref").get<std::string>();
  r.observation = j.value("observation", std::string{});
  r.actions = j.value("actions", std::vector<std::string>{});
}

void to_json(json& j, const StepResult& r) {
  j = json{{"observation_ref", r.observation_ref},
           {"observation", r.observation},
           {"actions", r.actions},
           {"reward", r.reward},
           {"done", r.done}};
  if (r.error) j["error"] = *r.error;
}

void from_json(const json& j, StepResult& r) {
  r.observation_ref = j.at("observation_ref").get<std::string>();
  r.observation = j.value("observation", std::string{});
  r.actions = j.value("actions", std::vector<std::string>{});
  r.reward = j.at("reward").get<double>();
  r.done = j.at("done").get<bool>();
  r.error.reset();
  if (j.contains("error") && !j.at("error").is_null()) r.error = j.at("error").get<std::string>();
}

void to_json(json& j, const SnapshotInfo& s) {
  j = json{{"snapshot_id", s.snapshot_id}, {"state_hash", s.state_hash}};
}

void from_json(const json& j, SnapshotInfo& s) {
  s.snapshot_id = j.at("snapshot_id").get<std::string>();
  s.state_hash = j.at("state_hash").get<std::string>();
}

}  // namespace rollforge::env
