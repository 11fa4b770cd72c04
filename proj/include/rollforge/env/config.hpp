#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rollforge/core/model.hpp"
#include "rollforge/core/observation_store.hpp"
#include "rollforge/env/pool.hpp"
#include "rollforge/env/sim_env.hpp"

namespace rollforge::env {

// Environment selection loaded from YAML:
//
//   kind: counting            # simulated env kind (counting | risky_ops)
//   endpoints: [http://...]   # optional remote envs speaking the wire protocol
//   spawn_command: "python -m adapter --port {port} --env counting"   # optional
//   spawn_base_port: 19000
//   tasks: [count-a, count-b]
//   reward_schema: {kind: binary}
//   seed: 7
//   goal_length: 4
//   failure_rate: 0.0
//   high_risk_patterns: [delete, overwrite]
//
// With neither endpoints nor spawn_command, environments run in-process.
struct EnvConfig {
  SimKind kind = SimKind::counting;
  std::vector<std::string> endpoints;
  std::string spawn_command;
  int spawn_base_port = 19000;
  std::vector<std::string> tasks;
  core::RewardSchema reward;
  std::uint64_t seed = 0;
  int goal_length = 4;
  double failure_rate = 0.0;
  std::vector<std::string> high_risk_patterns;
};

EnvConfig load_env_config(const std::filesystem::path& path);
EnvConfig parse_env_config(const std::string& yaml, const std::string& origin = "<inline>");
std::string to_yaml(const EnvConfig& config);
// Loads every *.yaml / *.yml under `root` (sorted) and concatenates their task lists.
// Settings other than tasks come from the first file.
EnvConfig load_env_root(const std::filesystem::path& root);

EnvFactory make_env_factory(const EnvConfig& config, std::shared_ptr<core::ObservationStore> store = nullptr);

}  // namespace rollforge::env
