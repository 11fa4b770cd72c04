#pragma once

#include <map>
#include <memory>
#include <set>
#include <string>
#include <unordered_map>

#include "rollforge/core/model.hpp"
#include "rollforge/core/observation_store.hpp"
#include "rollforge/env/environment.hpp"

namespace rollforge::env {

enum class SimKind {
  counting,   // emit the next element of an arithmetic sequence
  risky_ops,  // edit a small file tree; some verbs can destroy protected files
};

std::string to_string(SimKind kind);
SimKind sim_kind_from_string(const std::string& s);

struct SimEnvConfig {
  SimKind kind = SimKind::counting;
  core::RewardSchema reward;
  int goal_length = 4;
  // Probability that a step fails at the transport level (deterministic per state).
  double failure_rate = 0.0;
  bool fail_on_start = false;
};

// Outcome class of one step before the reward schema is applied.
enum class StepGrade { unsafe, neutral, progress, success };

// Maps a step outcome onto the schema. `final` marks the episode's last step.
double reward_for(StepGrade grade, bool final, const core::RewardSchema& schema);

// In-process deterministic environment: every observation is a pure function of
// (task_id, seed, action history). Snapshots are full state copies.
class SimEnv final : public Environment {
 public:
  SimEnv(std::string env_id, SimEnvConfig config,
         std::shared_ptr<core::ObservationStore> store = nullptr);

  void start() override;
  ResetResult reset(const std::string& task_id, std::uint64_t seed) override;
  StepResult step(const std::string& action) override;
  void close() override;
  SnapshotInfo snapshot() override;
  std::string restore(const std::string& snapshot_id) override;
  std::string endpoint() const override { return "sim://" + env_id_; }

  // Canonical serialization of the full state; its SHA-256 is the state hash.
  std::string canonical_state() const;
  std::string state_hash() const;
  bool is_done() const noexcept { return state_.done; }

 private:
  struct State {
    std::string task_id;
    std::uint64_t seed = 0;
    bool was_reset = false;
    bool done = false;
    int step_count = 0;
    // counting
    long long start = 0;
    long long stride = 1;
    int progress = 0;
    // risky_ops
    std::map<std::string, std::string> files;
    std::set<std::string> protected_files;
    std::vector<std::string> goal_files;
    std::vector<std::string> history;
  };

  std::string observation() const;
  std::vector<std::string> candidate_actions() const;
  std::string publish(const std::string& obs);
  StepGrade apply_counting(const std::string& action, std::optional<std::string>& error);
  StepGrade apply_risky(const std::string& action, std::optional<std::string>& error);

  std::string env_id_;
  SimEnvConfig config_;
  std::shared_ptr<core::ObservationStore> store_;
  State state_;
  bool closed_ = false;
  std::uint64_t next_snapshot_ = 0;
  std::unordered_map<std::string, State> snapshots_;
};

}  // namespace rollforge::env
