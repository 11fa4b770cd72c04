#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "rollforge/env/config.hpp"

namespace rollforge::orch {

enum class Mode { sync, async };
std::string to_string(Mode mode);
Mode mode_from_string(const std::string& s);

struct RunConfig {
  Mode mode = Mode::async;
  std::string env_source;  // where `env` came from, for the report
  env::EnvConfig env;
  std::size_t pool_size = 7;
  std::size_t group_size = 4;
  std::uint64_t off_by_n = 1;
  std::size_t global_batch_size = 32;
  int epochs = 1;
  std::size_t total_steps = 30;
  int max_env_steps = 8;
  std::int64_t rollout_time_ms = 10;  // simulated duration of one trajectory
  std::int64_t train_time_ms = 100;   // simulated duration of one batch
  std::uint64_t seed = 0;
  double kl_weight = 0.0;
  std::optional<std::uint64_t> teacher_seed;  // attaches a frozen mock teacher
  std::size_t pack_max_len = 2048;
  bool full_context_layout = true;
  bool checkpoints = false;  // anchor per TriggerPolicy, roll back on rejected actions
  std::filesystem::path runs_root = "runs";
  std::string run_id;  // generated when empty
  std::string buffer_host = "127.0.0.1";
  int buffer_port = 18889;   // BUFFER_SERVER_PORT
  int gateway_port = 18890;  // LLM_PROXY_PORT
  bool persist_inference = true;

  std::size_t groups_per_batch() const { return global_batch_size / group_size; }
  // Batches the rollout side may run ahead of the trainer in sync mode.
  std::size_t sync_lookahead() const { return off_by_n >= 1 ? 1 : 0; }
};

void validate(const RunConfig& config);

// KEY=VALUE lines; '#' comments, optional quotes and `export` prefix. Existing
// variables win. Returns the number of variables set; a missing file sets none.
std::size_t load_dotenv(const std::filesystem::path& path);
std::map<std::string, std::string> parse_dotenv(const std::string& text);

// Exactly one of an explicit config file or env root, falling back to
// AIEVOBOX_ENV_CONFIG / AIEVOBOX_ENV_ROOT. Throws ConfigError otherwise.
env::EnvConfig resolve_env(const std::optional<std::filesystem::path>& env_config,
                           const std::optional<std::filesystem::path>& env_root, std::string* source = nullptr);

// RL_GROUP_SIZE, RL_OFF_BY_N, SLIME_GLOBAL_BATCH_SIZE, RL_EPOCH, BUFFER_SERVER_PORT, LLM_PROXY_PORT.
RunConfig apply_env(RunConfig config);

std::string to_yaml(const RunConfig& config);
RunConfig run_config_from_yaml(const std::string& text);

}  // namespace rollforge::orch
