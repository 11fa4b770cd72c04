#include "rollforge/env/config.hpp"

#include <algorithm>

#include <yaml-cpp/yaml.h>

#include "rollforge/env/http_env.hpp"

namespace rollforge::env {

namespace {

EnvConfig parse(const YAML::Node& root, const std::string& origin) {
  EnvConfig c;
  try {
    if (root["kind"]) c.kind = sim_kind_from_string(root["kind"].as<std::string>());
    if (root["endpoints"]) c.endpoints = root["endpoints"].as<std::vector<std::string>>();
    if (root["spawn_command"]) c.spawn_command = root["spawn_command"].as<std::string>();
    if (root["spawn_base_port"]) c.spawn_base_port = root["spawn_base_port"].as<int>();
    if (root["tasks"]) c.tasks = root["tasks"].as<std::vector<std::string>>();
    if (auto r = root["reward_schema"]) {
      c.reward.kind = core::reward_kind_from_string(r["kind"].as<std::string>("binary"));
      if (r["levels"]) c.reward.levels = r["levels"].as<std::vector<double>>();
    }
    if (root["seed"]) c.seed = root["seed"].as<std::uint64_t>();
    if (root["goal_length"]) c.goal_length = root["goal_length"].as<int>();
    if (root["failure_rate"]) c.failure_rate = root["failure_rate"].as<double>();
    if (root["high_risk_patterns"]) c.high_risk_patterns = root["high_risk_patterns"].as<std::vector<std::string>>();
  } catch (const YAML::Exception& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  core::validate(c.reward);
  if (c.tasks.empty()) throw ConfigError(origin + ": task list is empty");
  if (c.failure_rate < 0.0 || c.failure_rate > 1.0) throw ConfigError(origin + ": failure_rate outside [0,1]");
  return c;
}

}  // namespace

EnvConfig load_env_config(const std::filesystem::path& path) {
  YAML::Node root;
  try {
    root = YAML::LoadFile(path.string());
  } catch (const YAML::Exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse(root, path.string());
}

EnvConfig parse_env_config(const std::string& yaml, const std::string& origin) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml);
  } catch (const YAML::Exception& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  return parse(root, origin);
}

std::string to_yaml(const EnvConfig& c) {
  YAML::Emitter out;
  out << YAML::BeginMap;
  out << YAML::Key << "kind" << YAML::Value << to_string(c.kind);
  if (!c.endpoints.empty()) out << YAML::Key << "endpoints" << YAML::Value << YAML::Flow << c.endpoints;
  if (!c.spawn_command.empty()) {
    out << YAML::Key << "spawn_command" << YAML::Value << c.spawn_command;
    out << YAML::Key << "spawn_base_port" << YAML::Value << c.spawn_base_port;
  }
  out << YAML::Key << "tasks" << YAML::Value << YAML::Flow << c.tasks;
  out << YAML::Key << "reward_schema" << YAML::Value << YAML::Flow << YAML::BeginMap;
  out << YAML::Key << "kind" << YAML::Value << core::to_string(c.reward.kind);
  if (!c.reward.levels.empty()) out << YAML::Key << "levels" << YAML::Value << YAML::Flow << c.reward.levels;
  out << YAML::EndMap;
  out << YAML::Key << "seed" << YAML::Value << c.seed;
  out << YAML::Key << "goal_length" << YAML::Value << c.goal_length;
  out << YAML::Key << "failure_rate" << YAML::Value << c.failure_rate;
  if (!c.high_risk_patterns.empty()) {
    out << YAML::Key << "high_risk_patterns" << YAML::Value << YAML::Flow << c.high_risk_patterns;
  }
  out << YAML::EndMap;
  return out.c_str();
}

EnvConfig load_env_root(const std::filesystem::path& root) {
  if (!std::filesystem::is_directory(root)) throw ConfigError(root.string() + " is not a directory");
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(root)) {
    const auto ext = entry.path().extension();
    if (entry.is_regular_file() && (ext == ".yaml" || ext == ".yml")) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ConfigError(root.string() + " contains no environment YAML files");
  EnvConfig merged = load_env_config(files.front());
  for (std::size_t i = 1; i < files.size(); ++i) {
    auto next = load_env_config(files[i]);
    merged.tasks.insert(merged.tasks.end(), next.tasks.begin(), next.tasks.end());
  }
  return merged;
}

EnvFactory make_env_factory(const EnvConfig& config, std::shared_ptr<core::ObservationStore> store) {
  if (!config.endpoints.empty()) {
    auto endpoints = config.endpoints;
    return [endpoints](std::size_t ordinal) -> std::unique_ptr<Environment> {
      return std::make_unique<HttpEnv>(endpoints[ordinal % endpoints.size()]);
    };
  }
  if (!config.spawn_command.empty()) {
    auto command = config.spawn_command;
    const int base = config.spawn_base_port;
    return [command, base](std::size_t ordinal) -> std::unique_ptr<Environment> {
      return HttpEnv::spawn(command, base + static_cast<int>(ordinal));
    };
  }
  SimEnvConfig sim;
  sim.kind = config.kind;
  sim.reward = config.reward;
  sim.goal_length = config.goal_length;
  sim.failure_rate = config.failure_rate;
  return [sim, store](std::size_t ordinal) -> std::unique_ptr<Environment> {
    return std::make_unique<SimEnv>("sim-" + std::to_string(ordinal), sim, store);
  };
}

}  // namespace rollforge::env
