#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rollforge/core/errors.hpp"

namespace rollforge::env {

struct ResetResult {
  std::string observation_ref;
  std::string observation;
  // Candidate actions offered by the environment; may be empty.
  std::vector<std::string> actions;
};

struct StepResult {
  std::string observation_ref;
  std::string observation;
  std::vector<std::string> actions;
  double reward = 0.0;
  bool done = false;
  // The environment rejected the action; the episode is over and failed.
  std::optional<std::string> error;
};

struct SnapshotInfo {
  std::string snapshot_id;
  std::string state_hash;
};

class Snapshottable {
 public:
  virtual ~Snapshottable() = default;
  virtual SnapshotInfo snapshot() = 0;
  // Returns the state hash observed after restoring.
  virtual std::string restore(const std::string& snapshot_id) = 0;
};

// Uniform lifecycle of one environment instance, mirroring the HTTP wire protocol.
// "Start" is the first reset; start() here is only a reachability probe.
class Environment : public Snapshottable {
 public:
  virtual void start() {}
  virtual ResetResult reset(const std::string& task_id, std::uint64_t seed) = 0;
  virtual StepResult step(const std::string& action) = 0;
  virtual void close() = 0;
  // Called by the pool when a lease is returned.
  virtual void recycle() {}
  virtual std::string endpoint() const = 0;
};

void to_json(nlohmann::json& j, const ResetResult& r);
void from_json(const nlohmann::json& j, ResetResult& r);
void to_json(nlohmann::json& j, const StepResult& r);
void from_json(const nlohmann::json& j, StepResult& r);
void to_json(nlohmann::json& j, const SnapshotInfo& s);
void from_json(const nlohmann::json& j, SnapshotInfo& s);

}  // namespace rollforge::env
