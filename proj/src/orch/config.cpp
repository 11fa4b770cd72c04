#include "rollforge/orch/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "rollforge/buffer/buffer.hpp"
#include "rollforge/core/errors.hpp"

namespace rollforge::orch {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::optional<std::string> env_var(const char* name) {
  const char* v = std::getenv(name);
  if (!v || !*v) return std::nullopt;
  return std::string(v);
}

}  // namespace

std::string to_string(Mode mode) { return mode == Mode::sync ? "sync" : "async"; }

Mode mode_from_string(const std::string& s) {
  if (s == "sync") return Mode::sync;
  if (s == "async") return Mode::async;
  throw ConfigError("unknown mode '" + s + "' (expected sync or async)");
}

void validate(const RunConfig& c) {
  if (c.pool_size == 0) throw ConfigError("pool_size must be positive");
  if (c.group_size == 0) throw ConfigError("group_size must be positive");
  if (c.global_batch_size == 0 || c.global_batch_size % c.group_size != 0) {
    throw ConfigError("global_batch_size " + std::to_string(c.global_batch_size) + " is not a multiple of group_size " +
                      std::to_string(c.group_size));
  }
  if (c.epochs < 1) throw ConfigError("epochs must be at least 1");
  if (c.max_env_steps < 1) throw ConfigError("max_env_steps must be at least 1");
  if (c.rollout_time_ms < 0 || c.train_time_ms < 0) throw ConfigError("simulated timings must be non-negative");
  if (c.kl_weight < 0) throw ConfigError("kl_weight must be non-negative");
  if (c.env.tasks.empty()) throw ConfigError("environment config has no tasks");
  if (c.pack_max_len == 0) throw ConfigError("pack_max_len must be positive");
}

std::map<std::string, std::string> parse_dotenv(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    if (line.rfind("export ", 0) == 0) line = trim(line.substr(7));
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(".env line " + std::to_string(lineno) + ": expected KEY=VALUE");
    const auto key = trim(line.substr(0, eq));
    auto value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && (value.front() == '"' || value.front() == '\'') && value.back() == value.front()) {
      value = value.substr(1, value.size() - 2);
    } else if (auto hash = value.find(" #"); hash != std::string::npos) {
      value = trim(value.substr(0, hash));
    }
    if (key.empty()) throw ConfigError(".env line " + std::to_string(lineno) + ": empty key");
    out[key] = value;
  }
  return out;
}

std::size_t load_dotenv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) return 0;
  std::stringstream buf;
  buf << in.rdbuf();
  std::size_t set = 0;
  for (const auto& [k, v] : parse_dotenv(buf.str())) {
    if (std::getenv(k.c_str())) continue;
    ::setenv(k.c_str(), v.c_str(), 0);
    ++set;
  }
  return set;
}

env::EnvConfig resolve_env(const std::optional<std::filesystem::path>& env_config,
                           const std::optional<std::filesystem::path>& env_root, std::string* source) {
  auto cfg = env_config;
  auto root = env_root;
  if (!cfg && !root) {
    if (auto v = env_var("AIEVOBOX_ENV_CONFIG")) cfg = *v;
    if (auto v = env_var("AIEVOBOX_ENV_ROOT")) root = *v;
  }
  if (cfg && root) throw ConfigError("set exactly one of AIEVOBOX_ENV_CONFIG and AIEVOBOX_ENV_ROOT, not both");
  if (!cfg && !root) throw ConfigError("no environment selected: set AIEVOBOX_ENV_CONFIG or AIEVOBOX_ENV_ROOT");
  if (cfg) {
    if (source) *source = "config:" + cfg->string();
    return env::load_env_config(*cfg);
  }
  if (source) *source = "root:" + root->string();
  return env::load_env_root(*root);
}

RunConfig apply_env(RunConfig c) {
  buffer::BufferConfig b;
  b.group_size = c.group_size;
  b.off_by_n = c.off_by_n;
  b.global_batch_size = c.global_batch_size;
  b.epochs = c.epochs;
  b.port = c.buffer_port;
  try {
    b = buffer::apply_env(b);
  } catch (const ValidationError& e) {
    throw ConfigError(e.what());
  }
  c.group_size = b.group_size;
  c.off_by_n = b.off_by_n;
  c.global_batch_size = b.global_batch_size;
  c.epochs = b.epochs;
  c.buffer_port = b.port;
  if (auto v = env_var("LLM_PROXY_PORT")) {
    try {
      c.gateway_port = std::stoi(*v);
    } catch (const std::exception&) {
      throw ConfigError("LLM_PROXY_PORT is not a port number: " + *v);
    }
  }
  return c;
}

std::string to_yaml(const RunConfig& c) {
  YAML::Emitter out;
  out << YAML::BeginMap;
  out << YAML::Key << "mode" << YAML::Value << to_string(c.mode);
  out << YAML::Key << "run_id" << YAML::Value << c.run_id;
  out << YAML::Key << "env_source" << YAML::Value << c.env_source;
  out << YAML::Key << "pool_size" << YAML::Value << c.pool_size;
  out << YAML::Key << "group_size" << YAML::Value << c.group_size;
  out << YAML::Key << "off_by_n" << YAML::Value << c.off_by_n;
  out << YAML::Key << "global_batch_size" << YAML::Value << c.global_batch_size;
  out << YAML::Key << "epochs" << YAML::Value << c.epochs;
  out << YAML::Key << "total_steps" << YAML::Value << c.total_steps;
  out << YAML::Key << "max_env_steps" << YAML::Value << c.max_env_steps;
  out << YAML::Key << "rollout_time_ms" << YAML::Value << c.rollout_time_ms;
  out << YAML::Key << "train_time_ms" << YAML::Value << c.train_time_ms;
  out << YAML::Key << "seed" << YAML::Value << c.seed;
  out << YAML::Key << "kl_weight" << YAML::Value << c.kl_weight;
  if (c.teacher_seed) out << YAML::Key << "teacher_seed" << YAML::Value << *c.teacher_seed;
  out << YAML::Key << "pack_max_len" << YAML::Value << c.pack_max_len;
  out << YAML::Key << "full_context_layout" << YAML::Value << c.full_context_layout;
  out << YAML::Key << "checkpoints" << YAML::Value << c.checkpoints;
  out << YAML::Key << "runs_root" << YAML::Value << c.runs_root.string();
  out << YAML::Key << "buffer_host" << YAML::Value << c.buffer_host;
  out << YAML::Key << "buffer_port" << YAML::Value << c.buffer_port;
  out << YAML::Key << "gateway_port" << YAML::Value << c.gateway_port;
  out << YAML::Key << "persist_inference" << YAML::Value << c.persist_inference;
  out << YAML::Key << "env" << YAML::Value << YAML::Load(env::to_yaml(c.env));
  out << YAML::EndMap;
  return out.c_str();
}

RunConfig run_config_from_yaml(const std::string& text) {
  RunConfig c;
  YAML::Node n;
  try {
    n = YAML::Load(text);
    if (n["mode"]) c.mode = mode_from_string(n["mode"].as<std::string>());
    if (n["run_id"]) c.run_id = n["run_id"].as<std::string>();
    if (n["env_source"]) c.env_source = n["env_source"].as<std::string>();
    if (n["pool_size"]) c.pool_size = n["pool_size"].as<std::size_t>();
    if (n["group_size"]) c.group_size = n["group_size"].as<std::size_t>();
    if (n["off_by_n"]) c.off_by_n = n["off_by_n"].as<std::uint64_t>();
    if (n["global_batch_size"]) c.global_batch_size = n["global_batch_size"].as<std::size_t>();
    if (n["epochs"]) c.epochs = n["epochs"].as<int>();
    if (n["total_steps"]) c.total_steps = n["total_steps"].as<std::size_t>();
    if (n["max_env_steps"]) c.max_env_steps = n["max_env_steps"].as<int>();
    if (n["rollout_time_ms"]) c.rollout_time_ms = n["rollout_time_ms"].as<std::int64_t>();
    if (n["train_time_ms"]) c.train_time_ms = n["train_time_ms"].as<std::int64_t>();
    if (n["seed"]) c.seed = n["seed"].as<std::uint64_t>();
    if (n["kl_weight"]) c.kl_weight = n["kl_weight"].as<double>();
    if (n["teacher_seed"]) c.teacher_seed = n["teacher_seed"].as<std::uint64_t>();
    if (n["pack_max_len"]) c.pack_max_len = n["pack_max_len"].as<std::size_t>();
    if (n["full_context_layout"]) c.full_context_layout = n["full_context_layout"].as<bool>();
    if (n["checkpoints"]) c.checkpoints = n["checkpoints"].as<bool>();
    if (n["runs_root"]) c.runs_root = n["runs_root"].as<std::string>();
    if (n["buffer_host"]) c.buffer_host = n["buffer_host"].as<std::string>();
    if (n["buffer_port"]) c.buffer_port = n["buffer_port"].as<int>();
    if (n["gateway_port"]) c.gateway_port = n["gateway_port"].as<int>();
    if (n["persist_inference"]) c.persist_inference = n["persist_inference"].as<bool>();
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
  if (n["env"]) {
    YAML::Emitter e;
    e << n["env"];
    c.env = env::parse_env_config(e.c_str(), "run config env");
  }
  return c;
}

}  // namespace rollforge::orch
