#pragma once

#include <atomic>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "rollforge/orch/config.hpp"
#include "rollforge/orch/metrics.hpp"

namespace rollforge::orch {

struct RunResult {
  std::filesystem::path dir;
  RunSummary summary;
  std::vector<StepWindowMetrics> windows;
};

// Fills run_id when empty: "{mode}-{seed}-{epoch ms}".
RunConfig with_run_id(RunConfig config);

// Single-process pipeline: pool, gateway, buffer, rollout workers and the simulated
// trainer. Writes runs/{run_id}/{config.yaml, trajectories.jsonl, packs.jsonl,
// inference.jsonl, over_stale.jsonl, checkpoints.jsonl, metrics.jsonl, report.json,
// report.md}. A pool that cannot start throws ConfigError before any work.
RunResult run(RunConfig config, const std::atomic<bool>* stop = nullptr);

// Buffer-server process: hosts the buffer (buffer_port) and the gateway
// (gateway_port) and runs the rollout workers. Returns once the trainer has
// announced version total_steps (never when total_steps is 0) or `stop` is set.
// `on_ready` is called with the bound ports once both servers listen.
RunResult serve_buffer(RunConfig config, const std::atomic<bool>& stop,
                       const std::function<void(int buffer_port, int gateway_port)>& on_ready = {});

// Trainer process: handshakes with the buffer server (retrying with backoff for
// up to handshake_timeout_ms), then trains total_steps batches. Writes packs.jsonl
// and train_steps.jsonl into the run directory.
RunResult run_trainer(RunConfig config, const std::string& buffer_url, const std::atomic<bool>& stop,
                      std::int64_t handshake_timeout_ms = 10000);

}  // namespace rollforge::orch
