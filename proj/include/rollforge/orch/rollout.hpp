#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <map>
#include <mutex>
#include <optional>
#include <thread>
#include <vector>

#include "rollforge/buffer/buffer.hpp"
#include "rollforge/ckpt/tree.hpp"
#include "rollforge/core/jsonl.hpp"
#include "rollforge/core/tokenizer.hpp"
#include "rollforge/env/pool.hpp"
#include "rollforge/gateway/gateway.hpp"
#include "rollforge/orch/config.hpp"
#include "rollforge/orch/metrics.hpp"

namespace rollforge::orch {

struct RolloutStats {
  std::size_t trajectories = 0;
  std::size_t trajectory_failures = 0;
  std::size_t groups_submitted = 0;
  std::size_t groups_rejected = 0;
  std::size_t groups_abandoned = 0;  // every member failed
  std::size_t checkpoints = 0;
  std::size_t rollbacks = 0;
};

struct RolloutSinks {
  core::JsonlWriter* trajectories = nullptr;
  core::JsonlWriter* checkpoints = nullptr;
};

// The simulation runner: rollout workers that lease environments, query the
// gateway, assemble sample groups and submit them to the buffer.
//
// async: workers start a new group whenever they run out of work.
// sync:  work is released one batch at a time through grant(); each batch is
//        pinned to the version current when it was granted.
class RolloutRunner {
 public:
  RolloutRunner(const RunConfig& config, env::EnvPool& pool, gateway::Gateway& gateway, buffer::BufferApi& buffer,
                RolloutSinks sinks = {});
  ~RolloutRunner();

  RolloutRunner(const RolloutRunner&) = delete;
  RolloutRunner& operator=(const RolloutRunner&) = delete;

  void start();
  // Drops queued work and waits for in-flight trajectories.
  void stop();

  void grant(std::size_t batches, core::PolicyVersion pin);
  // Trainer moved to `v`: advance the gateway and record the bump time.
  void on_version(core::PolicyVersion v);

  // Wires sync credits and version bumps to a local buffer's observer hooks.
  void attach(buffer::SampleBuffer& buffer);

  std::vector<Interval> busy_intervals() const;
  std::vector<std::int64_t> completion_times() const;
  std::vector<std::int64_t> bump_times() const;
  RolloutStats stats() const;

 private:
  struct Job {
    std::size_t group_index = 0;
    std::size_t member = 0;
    core::PolicyVersion pin;
  };
  struct PendingGroup {
    core::PolicyVersion pin;
    std::vector<std::optional<core::Trajectory>> members;
    std::size_t finished = 0;
  };

  void worker_loop(std::size_t worker);
  std::optional<Job> next_job();
  void enqueue_group_locked(core::PolicyVersion pin);
  void replace_locked(core::PolicyVersion pin);
  std::optional<core::Trajectory> run_trajectory(const Job& job);
  void finish(const Job& job, std::optional<core::Trajectory> traj);

  RunConfig config_;
  env::EnvPool& pool_;
  gateway::Gateway& gateway_;
  buffer::BufferApi& buffer_;
  RolloutSinks sinks_;
  core::ByteTokenizer tokenizer_;

  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Job> jobs_;
  std::size_t credits_ = 0;
  std::deque<core::PolicyVersion> credit_pins_;
  std::size_t next_group_ = 0;
  bool stopping_ = false;
  std::map<std::size_t, PendingGroup> pending_;
  std::vector<Interval> busy_;
  std::vector<std::int64_t> done_;
  std::vector<std::int64_t> bumps_;
  RolloutStats stats_;
  core::PolicyVersion seen_version_;
  buffer::SampleBuffer* attached_ = nullptr;
  bool started_ = false;
  std::vector<std::thread> workers_;
};

}  // namespace rollforge::orch
