#pragma once

#include <atomic>
#include <cstdint>
#include <vector>

#include "rollforge/buffer/buffer.hpp"
#include "rollforge/core/jsonl.hpp"
#include "rollforge/orch/config.hpp"
#include "rollforge/orch/metrics.hpp"

namespace rollforge::orch {

struct TrainerTotals {
  std::size_t groups_trained = 0;
  std::size_t staleness_violations = 0;
  std::size_t incomplete_trained = 0;
  std::size_t packs = 0;
  std::size_t oversize_samples = 0;
  double loss_sum = 0.0;
  double staleness_sum = 0.0;
};

// Simulated trainer: pulls one global batch, checks staleness and group
// completeness, builds and packs samples, computes the loss for real, sleeps
// train_time_ms and bumps the policy version.
class SimTrainer {
 public:
  SimTrainer(const RunConfig& config, buffer::BufferApi& buffer, core::JsonlWriter* packs_out = nullptr);

  // Returns false when stopped before a batch arrived.
  bool step(const std::atomic<bool>& stop);
  std::size_t run(std::size_t steps, const std::atomic<bool>& stop);

  core::PolicyVersion version() const noexcept { return version_; }
  const std::vector<TrainStepRecord>& records() const noexcept { return records_; }
  const TrainerTotals& totals() const noexcept { return totals_; }

 private:
  RunConfig config_;
  buffer::BufferApi& buffer_;
  core::JsonlWriter* packs_out_;
  core::PolicyVersion version_;
  std::vector<TrainStepRecord> records_;
  TrainerTotals totals_;
};

}  // namespace rollforge::orch
