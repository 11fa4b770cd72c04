#include "rollforge/env/sim_env.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

#include <json.hpp>

#include "rollforge/core/hash.hpp"

namespace rollforge::env {

using core::RewardKind;

std::string to_string(SimKind kind) {
  return kind == SimKind::counting ? "counting" : "risky_ops";
}

SimKind sim_kind_from_string(const std::string& s) {
  if (s == "counting") return SimKind::counting;
  if (s == "risky_ops" || s == "risky-ops") return SimKind::risky_ops;
  throw ConfigError("unknown simulated environment kind '" + s + "'");
}

double reward_for(StepGrade grade, bool final, const core::RewardSchema& schema) {
  switch (schema.kind) {
    case RewardKind::binary:
      return grade == StepGrade::progress || grade == StepGrade::success ? 1.0 : 0.0;
    case RewardKind::terminal_binary:
      return final && grade == StepGrade::success ? 1.0 : 0.0;
    case RewardKind::multilevel_discrete: {
      const auto& lv = schema.levels;
      if (lv.empty()) return 0.0;
      const double rank = static_cast<double>(static_cast<int>(grade));
      const auto idx = static_cast<std::size_t>(std::lround(rank * static_cast<double>(lv.size() - 1) / 3.0));
      return lv[std::min(idx, lv.size() - 1)];
    }
  }
  return 0.0;
}

SimEnv::SimEnv(std::string env_id, SimEnvConfig config, std::shared_ptr<core::ObservationStore> store)
    : env_id_(std::move(env_id)), config_(std::move(config)), store_(std::move(store)) {
  core::validate(config_.reward);
  if (config_.goal_length < 1) throw ConfigError("goal_length must be positive");
}

void SimEnv::start() {
  if (config_.fail_on_start) throw WireError(endpoint() + ": connection refused (injected)");
}

ResetResult SimEnv::reset(const std::string& task_id, std::uint64_t seed) {
  if (closed_) throw ProtocolError("reset on closed environment " + env_id_);
  State s;
  s.task_id = task_id;
  s.seed = seed;
  s.was_reset = true;
  const std::uint64_t h = core::splitmix64(core::Fnv1a{}.add(task_id).add(seed).digest());
  if (config_.kind == SimKind::counting) {
    s.start = static_cast<long long>(h % 50);
    s.stride = 1 + static_cast<long long>((h >> 8) % 5);
  } else {
    s.files = {{"notes.md", "draft " + std::to_string(h % 97)}, {"config.yml", "mode: safe"}, {"data.csv", "a,b\n1,2"}};
    s.protected_files = {"config.yml", "data.csv"};
    for (int i = 0; i < config_.goal_length; ++i) s.goal_files.push_back("out" + std::to_string(i) + ".txt");
  }
  state_ = std::move(s);
  const std::string obs = observation();
  return ResetResult{publish(obs), obs, candidate_actions()};
}

std::string SimEnv::publish(const std::string& obs) {
  if (store_) return store_->put(obs);
  return core::ObservationStore::key_for(obs);
}

std::string SimEnv::observation() const {
  std::string out = "task=" + state_.task_id + " step=" + std::to_string(state_.step_count);
  if (config_.kind == SimKind::counting) {
    out += " | count from " + std::to_string(state_.start) + " by " + std::to_string(state_.stride) + " | seq:";
    for (int i = 0; i <= state_.progress; ++i) out += " " + std::to_string(state_.start + state_.stride * i);
    out += " | goal " + std::to_string(config_.goal_length) + " more";
  } else {
    out += " | files:";
    for (const auto& [name, content] : state_.files) out += " " + name + "(" + std::to_string(content.size()) + ")";
    out += " | goal:";
    for (const auto& g : state_.goal_files) out += " " + g;
  }
  if (state_.done) out += " | done";
  return out;
}

std::vector<std::string> SimEnv::candidate_actions() const {
  if (state_.done) return {};
  std::vector<std::string> actions;
  if (config_.kind == SimKind::counting) {
    const long long next = state_.start + state_.stride * (state_.progress + 1);
    for (long long v : {next, next + 1, next - 1, next + state_.stride + 1}) actions.push_back(std::to_string(v));
  } else {
    std::string next_goal = "out0.txt";
    for (const auto& g : state_.goal_files) {
      if (!state_.files.contains(g)) {
        next_goal = g;
        break;
      }
    }
    actions = {"write " + next_goal, "write scratch.txt", "read notes.md",
               "delete config.yml", "overwrite notes.md", "overwrite data.csv"};
  }
  // Deterministic shuffle keyed by the state.
  std::uint64_t h = core::Fnv1a{}.add(state_.task_id).add(state_.seed).add(static_cast<std::uint64_t>(state_.step_count)).digest();
  for (std::size_t i = actions.size(); i > 1; --i) {
    h = core::splitmix64(h);
    std::swap(actions[i - 1], actions[h % i]);
  }
  return actions;
}

StepGrade SimEnv::apply_counting(const std::string& action, std::optional<std::string>& error) {
  long long value = 0;
  const auto* first = action.data();
  const auto* last = action.data() + action.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc{} || ptr != last) {
    error = "rejected: '" + action + "' is not an integer";
    return StepGrade::unsafe;
  }
  const long long expected = state_.start + state_.stride * (state_.progress + 1);
  if (value != expected) return StepGrade::neutral;
  ++state_.progress;
  return state_.progress >= config_.goal_length ? StepGrade::success : StepGrade::progress;
}

StepGrade SimEnv::apply_risky(const std::string& action, std::optional<std::string>& error) {
  const auto space = action.find(' ');
  const std::string verb = action.substr(0, space);
  const std::string target = space == std::string::npos ? "" : action.substr(space + 1);
  if (target.empty() || (verb != "write" && verb != "read" && verb != "delete" && verb != "overwrite")) {
    error = "rejected: unknown action '" + action + "'";
    return StepGrade::unsafe;
  }
  const bool is_protected = state_.protected_files.contains(target);
  if (verb == "read") return StepGrade::neutral;
  if (verb == "delete") {
    state_.files.erase(target);
    return is_protected ? StepGrade::unsafe : StepGrade::neutral;
  }
  if (verb == "overwrite") {
    if (state_.files.contains(target)) state_.files[target] = "overwritten@" + std::to_string(state_.step_count);
    return is_protected ? StepGrade::unsafe : StepGrade::neutral;
  }
  // write
  const bool is_goal = std::find(state_.goal_files.begin(), state_.goal_files.end(), target) != state_.goal_files.end();
  const bool existed = state_.files.contains(target);
  if (existed) return StepGrade::neutral;
  state_.files[target] = "content:" + target;
  if (!is_goal) return StepGrade::neutral;
  const bool all = std::all_of(state_.goal_files.begin(), state_.goal_files.end(),
                               [&](const std::string& g) { return state_.files.contains(g); });
  return all ? StepGrade::success : StepGrade::progress;
}

StepResult SimEnv::step(const std::string& action) {
  if (closed_) throw ProtocolError("step on closed environment " + env_id_);
  if (!state_.was_reset) throw ProtocolError("step before reset on " + env_id_);
  if (state_.done) throw ProtocolError("step after episode end on " + env_id_);
  if (config_.failure_rate > 0.0) {
    const std::uint64_t h = core::splitmix64(core::Fnv1a{}
                                                 .add(state_.task_id)
                                                 .add(state_.seed)
                                                 .add(static_cast<std::uint64_t>(state_.step_count))
                                                 .add(action)
                                                 .add(std::string_view("failure"))
                                                 .digest());
    if (core::unit_from_hash(h) < config_.failure_rate) {
      throw WireError(endpoint() + ": connection reset (injected failure)");
    }
  }
  std::optional<std::string> error;
  StepGrade grade = config_.kind == SimKind::counting ? apply_counting(action, error) : apply_risky(action, error);
  ++state_.step_count;
  state_.history.push_back(action);
  // Rejected actions and destroyed protected files both end the episode.
  const bool done = grade == StepGrade::unsafe || grade == StepGrade::success;
  state_.done = done;
  StepResult r;
  r.reward = reward_for(grade, done, config_.reward);
  r.done = done;
  r.error = error;
  r.observation = observation();
  r.observation_ref = publish(r.observation);
  r.actions = candidate_actions();
  return r;
}

void SimEnv::close() { closed_ = true; }

std::string SimEnv::canonical_state() const {
  nlohmann::json j{{"kind", to_string(config_.kind)},
                   {"task_id", state_.task_id},
                   {"seed", state_.seed},
                   {"was_reset", state_.was_reset},
                   {"done", state_.done},
                   {"step_count", state_.step_count},
                   {"start", state_.start},
                   {"stride", state_.stride},
                   {"progress", state_.progress},
                   {"files", state_.files},
                   {"protected", state_.protected_files},
                   {"goal", state_.goal_files},
                   {"history", state_.history}};
  return j.dump();
}

std::string SimEnv::state_hash() const { return core::sha256_hex(canonical_state()); }

SnapshotInfo SimEnv::snapshot() {
  if (closed_) throw ProtocolError("snapshot on closed environment " + env_id_);
  std::string id = env_id_ + "-snap-" + std::to_string(next_snapshot_++);
  snapshots_.emplace(id, state_);
  return SnapshotInfo{id, state_hash()};
}

std::string SimEnv::restore(const std::string& snapshot_id) {
  auto it = snapshots_.find(snapshot_id);
  if (it == snapshots_.end()) throw ProtocolError("unknown snapshot '" + snapshot_id + "'");
  state_ = it->second;
  return state_hash();
}

}  // namespace rollforge::env
