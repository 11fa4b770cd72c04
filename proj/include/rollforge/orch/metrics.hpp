#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace rollforge::orch {

// Half-open [start_ms, end_ms) on the steady clock.
struct Interval {
  std::int64_t start_ms = 0;
  std::int64_t end_ms = 0;
};

double overlap_ms(const Interval& a, std::int64_t lo, std::int64_t hi);

// One step window runs from the previous trainer version bump (or the run start)
// to the next bump.
struct StepWindowMetrics {
  std::size_t step = 0;
  std::int64_t start_ms = 0;  // relative to run start
  std::int64_t end_ms = 0;
  std::size_t trajectories_generated = 0;
  std::size_t batches_trained = 0;
  double rollout_busy_ms = 0.0;  // summed over rollout workers
  double rollout_idle_ms = 0.0;
  double train_busy_ms = 0.0;
  double train_idle_ms = 0.0;
  std::size_t groups_trained = 0;
  double mean_staleness = 0.0;
  std::map<std::uint64_t, std::size_t> staleness_histogram;
  std::optional<double> loss;

  double wall_ms() const { return static_cast<double>(end_ms - start_ms); }
  bool operator==(const StepWindowMetrics&) const = default;
};

void to_json(nlohmann::json& j, const StepWindowMetrics& m);
void from_json(const nlohmann::json& j, StepWindowMetrics& m);

struct TrainStepRecord {
  std::size_t step = 0;
  Interval busy;  // dequeue returned .. version bump
  std::vector<std::uint64_t> staleness;  // per trained group
  std::vector<std::size_t> group_sizes;
  double loss = 0.0;
};

struct WindowInputs {
  std::int64_t run_start_ms = 0;
  std::vector<std::int64_t> bumps;  // one per trained step, ascending
  std::size_t rollout_workers = 0;
  std::vector<Interval> rollout_busy;  // one per trajectory attempt
  std::vector<std::int64_t> trajectory_done_ms;
  std::vector<TrainStepRecord> train;  // may be empty when the trainer is remote
};

std::vector<StepWindowMetrics> compute_windows(const WindowInputs& in);

double rollout_idle_fraction(const std::vector<StepWindowMetrics>& windows);
double mean_trajectories_per_window(const std::vector<StepWindowMetrics>& windows);

inline constexpr const char* kWindowDefinition =
    "step window k spans the trainer's (k-1)-th to k-th policy version bump; window 0 starts at run start";

struct RunSummary {
  std::string run_id;
  std::string mode;
  std::string window_definition = kWindowDefinition;
  std::size_t steps = 0;
  std::size_t pool_size = 0;
  std::size_t group_size = 0;
  std::uint64_t off_by_n = 0;
  std::int64_t wall_ms = 0;
  std::size_t trajectories = 0;
  std::size_t trajectory_failures = 0;  // transport failures, never submitted
  std::size_t groups_submitted = 0;
  std::size_t groups_rejected = 0;  // refused by the buffer (incomplete)
  std::size_t groups_abandoned = 0;  // every member failed; nothing to submit
  std::size_t groups_trained = 0;
  std::size_t groups_evicted = 0;
  std::size_t staleness_violations = 0;
  std::size_t incomplete_trained = 0;
  double mean_trajectories_per_window = 0.0;
  double rollout_idle_fraction = 0.0;
  double mean_staleness = 0.0;
  double mean_loss = 0.0;
  std::uint64_t inference_requests = 0;
  std::uint64_t inference_persisted = 0;
  std::uint64_t inference_dropped = 0;
  std::size_t checkpoints = 0;
  std::size_t rollbacks = 0;
  std::size_t packs = 0;
  std::size_t oversize_samples = 0;
  std::vector<std::string> warnings;
};

void to_json(nlohmann::json& j, const RunSummary& s);
void from_json(const nlohmann::json& j, RunSummary& s);

// What `report` recovers from a run directory.
struct RunRecord {
  std::filesystem::path dir;
  std::optional<RunSummary> summary;
  std::vector<StepWindowMetrics> windows;
  std::size_t skipped_lines = 0;
  std::vector<std::string> gaps;  // missing files or sections
};

RunRecord load_run(const std::filesystem::path& dir);

// Per-run tables plus, for two or more runs, a ratio table against the first sync run
// (or the first run when none is sync).
std::string render_markdown(const std::vector<RunRecord>& runs);
nlohmann::json render_json(const std::vector<RunRecord>& runs);

}  // namespace rollforge::orch
