#include "rollforge/core/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace rollforge::core {

using nlohmann::json;

JobStatus make_job_status(std::size_t succeeded, std::vector<JobError> errors) {
  JobStatus status;
  if (errors.empty()) {
    status.state = JobState::success;
  } else if (succeeded > 0) {
    status.state = JobState::partial_success;
  } else {
    status.state = JobState::error;
  }
  status.errors = std::move(errors);
  return status;
}

namespace {

void check_logprobs(const std::vector<double>& lps, const std::string& field) {
  for (std::size_t i = 0; i < lps.size(); ++i) {
    if (std::isnan(lps[i]) || lps[i] > 0.0) {
      throw ValidationError(field, "entry " + std::to_string(i) + " is not a log-probability (" +
                                       std::to_string(lps[i]) + ")");
    }
  }
}

void check_dists(const LogDistSeq& dists, std::size_t expected, const std::string& field) {
  if (dists.size() != expected) {
    throw ValidationError(field, "has " + std::to_string(dists.size()) + " rows, expected " +
                                     std::to_string(expected));
  }
  for (const auto& row : dists) check_logprobs(row, field);
}

}  // namespace

void validate(const Step& step) {
  if (step.index < 0) throw ValidationError("index", "negative step index");
  if (step.output_logprobs.size() != step.output_tokens.size()) {
    throw ValidationError("output_logprobs",
                          "length " + std::to_string(step.output_logprobs.size()) +
                              " != output_tokens length " + std::to_string(step.output_tokens.size()));
  }
  check_logprobs(step.output_logprobs, "output_logprobs");
  if (step.output_logprobs.end() !=
      std::find_if(step.output_logprobs.begin(), step.output_logprobs.end(),
                   [](double x) { return std::isinf(x); })) {
    throw ValidationError("output_logprobs", "sampled token has zero probability");
  }
  if (step.teacher_logprobs) {
    if (step.teacher_logprobs->size() != step.output_tokens.size()) {
      throw ValidationError("teacher_logprobs",
                            "length " + std::to_string(step.teacher_logprobs->size()) +
                                " != output_tokens length " + std::to_string(step.output_tokens.size()));
    }
    check_logprobs(*step.teacher_logprobs, "teacher_logprobs");
  }
  if (step.output_dists) check_dists(*step.output_dists, step.output_tokens.size(), "output_dists");
  if (step.teacher_dists) check_dists(*step.teacher_dists, step.output_tokens.size(), "teacher_dists");
  if (step.wall_time_ms < 0) throw ValidationError("wall_time_ms", "negative duration");
  if (!std::isfinite(step.reward)) throw ValidationError("reward", "not finite");
}

void validate(const Trajectory& t) {
  if (t.traj_id.empty()) throw ValidationError("traj_id", "empty");
  if (!std::isfinite(t.terminal_reward)) throw ValidationError("terminal_reward", "not finite");
  for (std::size_t i = 0; i < t.steps.size(); ++i) {
    if (t.steps[i].index != static_cast<std::int64_t>(i)) {
      throw ValidationError("steps", "step " + std::to_string(i) + " has index " +
                                         std::to_string(t.steps[i].index));
    }
    validate(t.steps[i]);
  }
}

void validate(const RewardSchema& schema) {
  if (schema.kind == RewardKind::multilevel_discrete) {
    if (schema.levels.size() < 2) throw ValidationError("levels", "need at least two levels");
    if (!std::is_sorted(schema.levels.begin(), schema.levels.end()) ||
        std::adjacent_find(schema.levels.begin(), schema.levels.end()) != schema.levels.end()) {
      throw ValidationError("levels", "levels must be strictly ascending");
    }
  } else if (!schema.levels.empty()) {
    throw ValidationError("levels", "levels only apply to multilevel_discrete");
  }
}

void validate_rewards(const Trajectory& t, const RewardSchema& schema) {
  validate(schema);
  auto is_binary = [](double r) { return r == 0.0 || r == 1.0; };
  auto in_levels = [&](double r) {
    return std::find(schema.levels.begin(), schema.levels.end(), r) != schema.levels.end();
  };
  for (std::size_t i = 0; i < t.steps.size(); ++i) {
    const double r = t.steps[i].reward;
    const bool last = i + 1 == t.steps.size();
    switch (schema.kind) {
      case RewardKind::binary:
        if (!is_binary(r)) throw ValidationError("reward", "step " + std::to_string(i) + " not in {0,1}");
        break;
      case RewardKind::multilevel_discrete:
        if (!in_levels(r)) throw ValidationError("reward", "step " + std::to_string(i) + " not a declared level");
        break;
      case RewardKind::terminal_binary:
        if (!last && r != 0.0) {
          throw ValidationError("reward", "terminal_binary assigns reward only at the final step");
        }
        if (last && !is_binary(r)) throw ValidationError("reward", "final reward not in {0,1}");
        break;
    }
  }
  const double tr = t.terminal_reward;
  if (schema.kind == RewardKind::multilevel_discrete ? !(tr == 0.0 || in_levels(tr)) : !is_binary(tr)) {
    throw ValidationError("terminal_reward", "not admissible under " + to_string(schema.kind));
  }
}

void validate(const JobStatus& status) {
  if (status.state == JobState::partial_success && status.errors.empty()) {
    throw ValidationError("errors", "partial_success requires at least one error entry");
  }
  if (status.state == JobState::success && !status.errors.empty()) {
    throw ValidationError("errors", "success status carries errors");
  }
}

bool is_complete(const SampleGroup& g) {
  if (g.expected_size == 0 || g.trajectories.size() != g.expected_size) return false;
  return std::all_of(g.trajectories.begin(), g.trajectories.end(), [&](const Trajectory& t) {
    return t.group_id == g.group_id && t.policy_version == g.policy_version;
  });
}

double trajectory_return(const Trajectory& t) {
  double total = t.terminal_reward;
  for (const auto& s : t.steps) total += s.reward;
  return total;
}

std::uint64_t staleness(PolicyVersion generated, PolicyVersion current) {
  if (current < generated) {
    throw OrderingError("trajectory version " + std::to_string(generated.value) +
                        " is newer than current version " + std::to_string(current.value));
  }
  return current.value - generated.value;
}

std::uint64_t staleness(const Trajectory& t, PolicyVersion current) {
  return staleness(t.policy_version, current);
}

// --- enum strings ------------------------------------------------------------

std::string to_string(TrajectoryStatus s) {
  switch (s) {
    case TrajectoryStatus::completed: return "completed";
    case TrajectoryStatus::failed: return "failed";
    case TrajectoryStatus::truncated: return "truncated";
  }
  return "completed";
}

TrajectoryStatus trajectory_status_from_string(const std::string& s) {
  if (s == "completed") return TrajectoryStatus::completed;
  if (s == "failed") return TrajectoryStatus::failed;
  if (s == "truncated") return TrajectoryStatus::truncated;
  throw ValidationError("status", "unknown trajectory status '" + s + "'");
}

std::string to_string(RewardKind k) {
  switch (k) {
    case RewardKind::binary: return "binary";
    case RewardKind::multilevel_discrete: return "multilevel_discrete";
    case RewardKind::terminal_binary: return "terminal_binary";
  }
  return "binary";
}

RewardKind reward_kind_from_string(const std::string& s) {
  if (s == "binary") return RewardKind::binary;
  if (s == "multilevel_discrete") return RewardKind::multilevel_discrete;
  if (s == "terminal_binary") return RewardKind::terminal_binary;
  throw ValidationError("kind", "unknown reward kind '" + s + "'");
}

std::string to_string(JobState s) {
  switch (s) {
    case JobState::success: return "success";
    case JobState::partial_success: return "partial_success";
    case JobState::error: return "error";
  }
  return "error";
}

JobState job_state_from_string(const std::string& s) {
  if (s == "success") return JobState::success;
  if (s == "partial_success") return JobState::partial_success;
  if (s == "error") return JobState::error;
  throw ValidationError("state", "unknown job state '" + s + "'");
}

// --- json --------------------------------------------------------------------

namespace {

// -inf (zero probability) has no JSON literal; it travels as null.
json logprobs_to_json(const std::vector<double>& v) {
  json a = json::array();
  for (double x : v) a.push_back(std::isinf(x) ? json(nullptr) : json(x));
  return a;
}

std::vector<double> logprobs_from_json(const json& a) {
  std::vector<double> v;
  v.reserve(a.size());
  for (const auto& x : a) v.push_back(x.is_null() ? -std::numeric_limits<double>::infinity() : x.get<double>());
  return v;
}

json dists_to_json(const LogDistSeq& d) {
  json a = json::array();
  for (const auto& row : d) a.push_back(logprobs_to_json(row));
  return a;
}

LogDistSeq dists_from_json(const json& a) {
  LogDistSeq d;
  d.reserve(a.size());
  for (const auto& row : a) d.push_back(logprobs_from_json(row));
  return d;
}

template <typename T>
T required(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw ValidationError(key, "missing field");
  try {
    return it->get<T>();
  } catch (const json::exception& e) {
    throw ValidationError(key, e.what());
  }
}

}  // namespace

void to_json(json& j, const PolicyVersion& v) { j = v.value; }
void from_json(const json& j, PolicyVersion& v) { v.value = j.get<std::uint64_t>(); }

void to_json(json& j, const Step& s) {
  j = json{{"index", s.index},
           {"observation_ref", s.observation_ref},
           {"prompt_tokens", s.prompt_tokens},
           {"output_tokens", s.output_tokens},
           {"output_logprobs", logprobs_to_json(s.output_logprobs)},
           {"action", s.action},
           {"reward", s.reward},
           {"wall_time_ms", s.wall_time_ms}};
  if (s.teacher_logprobs) j["teacher_logprobs"] = logprobs_to_json(*s.teacher_logprobs);
  if (s.output_dists) j["output_dists"] = dists_to_json(*s.output_dists);
  if (s.teacher_dists) j["teacher_dists"] = dists_to_json(*s.teacher_dists);
  if (s.error) j["error"] = *s.error;
}

void from_json(const json& j, Step& s) {
  s.index = required<std::int64_t>(j, "index");
  s.observation_ref = required<std::string>(j, "observation_ref");
  s.prompt_tokens = required<TokenSeq>(j, "prompt_tokens");
  s.output_tokens = required<TokenSeq>(j, "output_tokens");
  s.output_logprobs = logprobs_from_json(required<json>(j, "output_logprobs"));
  s.action = required<std::string>(j, "action");
  s.reward = required<double>(j, "reward");
  s.wall_time_ms = required<std::int64_t>(j, "wall_time_ms");
  s.teacher_logprobs.reset();
  s.output_dists.reset();
  s.teacher_dists.reset();
  s.error.reset();
  if (j.contains("teacher_logprobs")) s.teacher_logprobs = logprobs_from_json(j.at("teacher_logprobs"));
  if (j.contains("output_dists")) s.output_dists = dists_from_json(j.at("output_dists"));
  if (j.contains("teacher_dists")) s.teacher_dists = dists_from_json(j.at("teacher_dists"));
  if (j.contains("error")) s.error = j.at("error").get<std::string>();
}

void to_json(json& j, const ForkInfo& f) {
  j = json{{"node_id", f.node_id},
           {"branch_id", f.branch_id},
           {"parent_traj_id", f.parent_traj_id},
           {"prefix_steps", f.prefix_steps}};
}

void from_json(const json& j, ForkInfo& f) {
  f.node_id = required<std::string>(j, "node_id");
  f.branch_id = required<std::string>(j, "branch_id");
  f.parent_traj_id = required<std::string>(j, "parent_traj_id");
  f.prefix_steps = required<std::int64_t>(j, "prefix_steps");
}

void to_json(json& j, const Trajectory& t) {
  j = json{{"format_version", kFormatVersion},
           {"traj_id", t.traj_id},
           {"task_id", t.task_id},
           {"env_id", t.env_id},
           {"group_id", t.group_id},
           {"policy_version", t.policy_version},
           {"steps", t.steps},
           {"terminal_reward", t.terminal_reward},
           {"status", to_string(t.status)},
           {"created_at", t.created_at}};
  if (t.fork) j["fork"] = *t.fork;
}

void from_json(const json& j, Trajectory& t) {
  const int fv = j.value("format_version", kFormatVersion);
  if (fv != kFormatVersion) {
    throw ValidationError("format_version", "unsupported format_version " + std::to_string(fv));
  }
  t.traj_id = required<std::string>(j, "traj_id");
  t.task_id = required<std::string>(j, "task_id");
  t.env_id = required<std::string>(j, "env_id");
  t.group_id = required<std::string>(j, "group_id");
  t.policy_version = required<PolicyVersion>(j, "policy_version");
  t.steps = required<std::vector<Step>>(j, "steps");
  t.terminal_reward = required<double>(j, "terminal_reward");
  t.status = trajectory_status_from_string(required<std::string>(j, "status"));
  t.created_at = required<std::int64_t>(j, "created_at");
  t.fork.reset();
  if (j.contains("fork")) t.fork = j.at("fork").get<ForkInfo>();
}

void to_json(json& j, const RewardSchema& r) {
  j = json{{"kind", to_string(r.kind)}};
  if (!r.levels.empty()) j["levels"] = r.levels;
}

void from_json(const json& j, RewardSchema& r) {
  r.kind = reward_kind_from_string(required<std::string>(j, "kind"));
  r.levels = j.value("levels", std::vector<double>{});
}

void to_json(json& j, const SampleGroup& g) {
  j = json{{"group_id", g.group_id},
           {"task_id", g.task_id},
           {"expected_size", g.expected_size},
           {"trajectories", g.trajectories},
           {"policy_version", g.policy_version}};
}

void from_json(const json& j, SampleGroup& g) {
  g.group_id = required<std::string>(j, "group_id");
  g.task_id = required<std::string>(j, "task_id");
  g.expected_size = required<std::size_t>(j, "expected_size");
  g.trajectories = required<std::vector<Trajectory>>(j, "trajectories");
  g.policy_version = required<PolicyVersion>(j, "policy_version");
}

void to_json(json& j, const JobError& e) {
  j = json{{"item_id", e.item_id}, {"error_code", e.error_code}, {"message", e.message}};
}

void from_json(const json& j, JobError& e) {
  e.item_id = required<std::string>(j, "item_id");
  e.error_code = required<std::string>(j, "error_code");
  e.message = required<std::string>(j, "message");
}

void to_json(json& j, const JobStatus& s) {
  j = json{{"state", to_string(s.state)}, {"errors", s.errors}};
}

void from_json(const json& j, JobStatus& s) {
  s.state = job_state_from_string(required<std::string>(j, "state"));
  s.errors = j.value("errors", std::vector<JobError>{});
}

std::string serialize_trajectory(const Trajectory& t) {
  validate(t);
  return json(t).dump();
}

Trajectory deserialize_trajectory(std::string_view record) {
  json j;
  try {
    j = json::parse(record);
  } catch (const json::parse_error& e) {
    throw ValidationError("record", e.what());
  }
  Trajectory t = j.get<Trajectory>();
  validate(t);
  return t;
}

}  // namespace rollforge::core
