#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rollforge/core/errors.hpp"

namespace rollforge::core {

using Token = std::int32_t;
using TokenSeq = std::vector<Token>;
// Log-probabilities over a full vocabulary, one row per generated token.
using LogDistSeq = std::vector<std::vector<double>>;

inline constexpr int kFormatVersion = 1;

// Identifies the weights that produced a trajectory; the unit of staleness.
struct PolicyVersion {
  std::uint64_t value = 0;

  constexpr PolicyVersion next() const noexcept { return PolicyVersion{value + 1}; }
  friend constexpr auto operator<=>(PolicyVersion, PolicyVersion) = default;
};

struct Step {
  std::int64_t index = 0;
  std::string observation_ref;
  TokenSeq prompt_tokens;
  TokenSeq output_tokens;
  std::vector<double> output_logprobs;
  std::optional<std::vector<double>> teacher_logprobs;
  // Full per-token distributions; present when the backend emits them.
  std::optional<LogDistSeq> output_dists;
  std::optional<LogDistSeq> teacher_dists;
  std::string action;
  double reward = 0.0;
  std::int64_t wall_time_ms = 0;
  // Set when the environment rejected the action.
  std::optional<std::string> error;

  bool operator==(const Step&) const = default;
};

enum class TrajectoryStatus { completed, failed, truncated };

// Present on trajectories produced by branch re-exploration from a checkpoint.
struct ForkInfo {
  std::string node_id;
  std::string branch_id;
  std::string parent_traj_id;
  std::int64_t prefix_steps = 0;

  bool operator==(const ForkInfo&) const = default;
};

struct Trajectory {
  std::string traj_id;
  std::string task_id;
  std::string env_id;
  std::string group_id;
  PolicyVersion policy_version;
  std::vector<Step> steps;
  double terminal_reward = 0.0;
  TrajectoryStatus status = TrajectoryStatus::completed;
  std::int64_t created_at = 0;  // ms since epoch, UTC
  std::optional<ForkInfo> fork;

  bool operator==(const Trajectory&) const = default;
};

enum class RewardKind { binary, multilevel_discrete, terminal_binary };

struct RewardSchema {
  RewardKind kind = RewardKind::binary;
  std::vector<double> levels;  // ascending; only for multilevel_discrete

  bool operator==(const RewardSchema&) const = default;
};

struct SampleGroup {
  std::string group_id;
  std::string task_id;
  std::size_t expected_size = 0;
  std::vector<Trajectory> trajectories;
  PolicyVersion policy_version;

  bool operator==(const SampleGroup&) const = default;
};

enum class JobState { success, partial_success, error };

struct JobError {
  std::string item_id;
  std::string error_code;
  std::string message;

  bool operator==(const JobError&) const = default;
};

struct JobStatus {
  JobState state = JobState::success;
  std::vector<JobError> errors;

  bool operator==(const JobStatus&) const = default;
};

// Builds the three-state status from per-item outcomes.
JobStatus make_job_status(std::size_t succeeded, std::vector<JobError> errors);

// --- validation -----------------------------------------------------------

void validate(const Step& step);
// Checks every step plus contiguous indexing.
void validate(const Trajectory& trajectory);
void validate(const RewardSchema& schema);
// Throws if the trajectory's rewards are not admissible under `schema`.
void validate_rewards(const Trajectory& trajectory, const RewardSchema& schema);
void validate(const JobStatus& status);

// COMPLETE iff expected_size members all sharing group_id and policy_version.
bool is_complete(const SampleGroup& group);

// Sum of per-step rewards plus the terminal reward.
double trajectory_return(const Trajectory& trajectory);

// current - generated version; throws OrderingError if current is older.
std::uint64_t staleness(const Trajectory& trajectory, PolicyVersion current);
std::uint64_t staleness(PolicyVersion generated, PolicyVersion current);

// --- serialization --------------------------------------------------------

std::string to_string(TrajectoryStatus status);
TrajectoryStatus trajectory_status_from_string(const std::string& s);
std::string to_string(RewardKind kind);
RewardKind reward_kind_from_string(const std::string& s);
std::string to_string(JobState state);
JobState job_state_from_string(const std::string& s);

void to_json(nlohmann::json& j, const PolicyVersion& v);
void from_json(const nlohmann::json& j, PolicyVersion& v);
void to_json(nlohmann::json& j, const Step& s);
void from_json(const nlohmann::json& j, Step& s);
void to_json(nlohmann::json& j, const ForkInfo& f);
void from_json(const nlohmann::json& j, ForkInfo& f);
void to_json(nlohmann::json& j, const Trajectory& t);
void from_json(const nlohmann::json& j, Trajectory& t);
void to_json(nlohmann::json& j, const RewardSchema& r);
void from_json(const nlohmann::json& j, RewardSchema& r);
void to_json(nlohmann::json& j, const SampleGroup& g);
void from_json(const nlohmann::json& j, SampleGroup& g);
void to_json(nlohmann::json& j, const JobError& e);
void from_json(const nlohmann::json& j, JobError& e);
void to_json(nlohmann::json& j, const JobStatus& s);
void from_json(const nlohmann::json& j, JobStatus& s);

// One JSON Lines record (no trailing newline). Validates first.
std::string serialize_trajectory(const Trajectory& trajectory);
// Parses and validates a record produced by serialize_trajectory.
Trajectory deserialize_trajectory(std::string_view record);

}  // namespace rollforge::core
