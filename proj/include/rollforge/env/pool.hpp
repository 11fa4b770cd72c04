#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "rollforge/core/model.hpp"
#include "rollforge/env/environment.hpp"

namespace rollforge::env {

enum class EnvState { warming, ready, leased, resetting, dead };

std::string to_string(EnvState state);

// A caller's view of one pooled environment. `lease_id` identifies the lease the
// handle was issued under; operations with an outdated lease fail with StaleLease.
struct EnvHandle {
  std::string env_id;
  std::string endpoint;
  EnvState state = EnvState::warming;
  std::optional<std::string> current_task;
  std::uint64_t lease_id = 0;
};

struct PoolConfig {
  std::size_t pool_size = 1;
  std::size_t warmup_batch = 1;
  std::int64_t lease_timeout_ms = 30000;
  std::string env_config_path;
  // Period of the maintenance loop that recycles released handles and spawns replacements.
  std::int64_t replenish_interval_ms = 20;
  bool replenish = true;
};

void validate(const PoolConfig& config);

struct PoolStats {
  std::size_t warming = 0;
  std::size_t ready = 0;
  std::size_t leased = 0;
  std::size_t resetting = 0;
  std::size_t dead = 0;
  std::size_t pool_size = 0;
  std::size_t waiting = 0;
  std::uint64_t leases_granted = 0;
  std::uint64_t double_release_warnings = 0;
  std::uint64_t replacements_spawned = 0;
  std::uint64_t spawn_failures = 0;
};

class PoolExhausted : public Error {
 public:
  PoolExhausted(const std::string& message, PoolStats stats) : Error(message), stats_(stats) {}
  const PoolStats& stats() const noexcept { return stats_; }

 private:
  PoolStats stats_;
};

// The handle is dead, closed, or no longer leased under this lease_id.
class StaleLease : public Error {
 public:
  using Error::Error;
};

// Creates (and starts) the environment for the n-th instance the pool spawns.
using EnvFactory = std::function<std::unique_ptr<Environment>(std::size_t ordinal)>;

// Pre-warmed pool of environments with FIFO leasing. lease/release are linearizable;
// a leased environment is driven only by its lease holder.
class EnvPool {
 public:
  EnvPool(PoolConfig config, EnvFactory factory);
  ~EnvPool();
  EnvPool(const EnvPool&) = delete;
  EnvPool& operator=(const EnvPool&) = delete;

  // Starts pool_size instances in batches of warmup_batch. Returns partial_success
  // when some fail and error (with per-env causes) when none start.
  core::JobStatus prewarm();

  // Blocks (FIFO among waiters) until a handle is ready or lease_timeout_ms passes.
  EnvHandle lease(const std::string& task_id);
  EnvHandle lease(const std::string& task_id, std::int64_t timeout_ms);

  ResetResult reset(const EnvHandle& h, const std::string& task_id, std::uint64_t seed);
  StepResult step(const EnvHandle& h, const std::string& action);
  SnapshotInfo snapshot(const EnvHandle& h);
  std::string restore(const EnvHandle& h, const std::string& snapshot_id);

  // Returns a leased handle to the pool; unleased handles are a counted no-op.
  void release(const EnvHandle& h);
  // Terminates the instance in any state; a replacement is spawned.
  void close(const EnvHandle& h);

  PoolStats stats() const;
  std::vector<EnvHandle> handles() const;
  const PoolConfig& config() const noexcept { return config_; }

 private:
  struct Slot {
    std::string env_id;
    std::string endpoint;
    EnvState state = EnvState::warming;
    std::optional<std::string> task;
    std::uint64_t lease_id = 0;
    bool episode_done = false;
    std::mutex env_mu;  // serializes calls into env
    std::unique_ptr<Environment> env;
  };

  std::shared_ptr<Slot> leased_slot(const EnvHandle& h);
  void mark_dead(const std::shared_ptr<Slot>& slot);
  std::shared_ptr<Slot> spawn(std::size_t ordinal, std::string* error);
  PoolStats stats_locked() const;
  void maintenance_loop();
  static EnvHandle handle_of(const Slot& slot);

  PoolConfig config_;
  EnvFactory factory_;

  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::vector<std::shared_ptr<Slot>> slots_;
  std::deque<std::uint64_t> waiters_;
  std::uint64_t next_ticket_ = 0;
  std::uint64_t next_lease_ = 0;
  std::size_t next_ordinal_ = 0;
  std::size_t in_flight_spawns_ = 0;
  PoolStats counters_;

  std::mutex maint_mu_;
  std::condition_variable maint_cv_;
  bool stopping_ = false;
  bool wake_ = false;
  std::thread maintenance_;
};

// RAII lease: releases on destruction. Exposes the leased environment's operations.
class LeasedEnv final : public Snapshottable {
 public:
  LeasedEnv(EnvPool& pool, const std::string& task_id);
  ~LeasedEnv() override;
  LeasedEnv(const LeasedEnv&) = delete;
  LeasedEnv& operator=(const LeasedEnv&) = delete;

  const EnvHandle& handle() const noexcept { return handle_; }
  ResetResult reset(const std::string& task_id, std::uint64_t seed) { return pool_.reset(handle_, task_id, seed); }
  StepResult step(const std::string& action) { return pool_.step(handle_, action); }
  SnapshotInfo snapshot() override { return pool_.snapshot(handle_); }
  std::string restore(const std::string& snapshot_id) override { return pool_.restore(handle_, snapshot_id); }

 private:
  EnvPool& pool_;
  EnvHandle handle_;
};

}  // namespace rollforge::env
