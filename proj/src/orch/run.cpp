#include "rollforge/orch/run.hpp"

#include <chrono>
#include <fstream>
#include <memory>
#include <thread>

#include "rollforge/buffer/buffer.hpp"
#include "rollforge/core/clock.hpp"
#include "rollforge/env/pool.hpp"
#include "rollforge/gateway/backend.hpp"
#include "rollforge/gateway/gateway.hpp"
#include "rollforge/orch/rollout.hpp"
#include "rollforge/orch/trainer.hpp"

namespace rollforge::orch {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::int64_t mono_ms() { return static_cast<std::int64_t>(core::steady_ms()); }

class DiscardSink final : public gateway::RecordSink {
 public:
  void write(const std::vector<gateway::InferenceRecord>&) override {}
};

fs::path prepare_dir(const RunConfig& config) {
  const fs::path dir = config.runs_root / config.run_id;
  fs::create_directories(dir);
  std::ofstream(dir / "config.yaml") << to_yaml(config);
  return dir;
}

std::unique_ptr<env::EnvPool> start_pool(const RunConfig& config, std::vector<std::string>& warnings) {
  env::PoolConfig pc;
  pc.pool_size = config.pool_size;
  pc.warmup_batch = config.pool_size;
  pc.env_config_path = config.env_source;
  auto pool = std::make_unique<env::EnvPool>(pc, env::make_env_factory(config.env));
  const auto status = pool->prewarm();
  if (status.state == core::JobState::error) {
    std::string causes;
    for (const auto& e : status.errors) causes += "\n  " + e.item_id + ": " + e.message;
    throw ConfigError("environment pool failed to start" + causes);
  }
  for (const auto& e : status.errors) warnings.push_back("env " + e.item_id + " failed to start: " + e.message);
  return pool;
}

std::unique_ptr<gateway::Gateway> make_gateway(const RunConfig& config, const fs::path& dir) {
  gateway::MockBackendConfig mc;
  mc.id = "policy";
  mc.seed = config.seed;
  std::vector<std::shared_ptr<gateway::ModelBackend>> backends{std::make_shared<gateway::MockBackend>(mc)};
  std::shared_ptr<gateway::RecordSink> sink;
  if (config.persist_inference) {
    sink = std::make_shared<gateway::JsonlRecordSink>(dir / "inference.jsonl");
  } else {
    sink = std::make_shared<DiscardSink>();
  }
  std::shared_ptr<gateway::ModelBackend> teacher;
  if (config.teacher_seed) {
    gateway::MockBackendConfig tc;
    tc.id = "teacher";
    tc.seed = *config.teacher_seed;
    tc.fixed_version = 0;
    teacher = std::make_shared<gateway::MockBackend>(tc);
  }
  return std::make_unique<gateway::Gateway>(std::move(backends), std::move(sink), gateway::GatewayConfig{},
                                            std::move(teacher));
}

buffer::BufferConfig buffer_config(const RunConfig& config) {
  buffer::BufferConfig bc;
  bc.group_size = config.group_size;
  bc.off_by_n = config.off_by_n;
  bc.global_batch_size = config.global_batch_size;
  bc.epochs = config.epochs;
  bc.port = config.buffer_port;
  return bc;
}

void fill_rollout(RunSummary& s, const RolloutStats& rs) {
  s.trajectories = rs.trajectories;
  s.trajectory_failures = rs.trajectory_failures;
  s.groups_submitted = rs.groups_submitted;
  s.groups_rejected = rs.groups_rejected;
  s.groups_abandoned = rs.groups_abandoned;
  s.checkpoints = rs.checkpoints;
  s.rollbacks = rs.rollbacks;
}

void fill_trainer(RunSummary& s, const TrainerTotals& t, std::size_t steps) {
  s.groups_trained = t.groups_trained;
  s.staleness_violations = t.staleness_violations;
  s.incomplete_trained = t.incomplete_trained;
  s.packs = t.packs;
  s.oversize_samples = t.oversize_samples;
  s.mean_staleness = t.groups_trained ? t.staleness_sum / static_cast<double>(t.groups_trained) : 0.0;
  s.mean_loss = steps ? t.loss_sum / static_cast<double>(steps) : 0.0;
}

void fill_gateway(RunSummary& s, gateway::Gateway& gw) {
  gw.flush();
  const auto st = gw.stats();
  s.inference_requests = st.requests;
  s.inference_persisted = st.persistence.flushed;
  s.inference_dropped = st.persistence.dropped;
}

RunSummary base_summary(const RunConfig& config) {
  RunSummary s;
  s.run_id = config.run_id;
  s.mode = to_string(config.mode);
  s.pool_size = config.pool_size;
  s.group_size = config.group_size;
  s.off_by_n = config.off_by_n;
  return s;
}

void write_report(const fs::path& dir, RunSummary& summary, const std::vector<StepWindowMetrics>& windows) {
  summary.steps = windows.size();
  summary.mean_trajectories_per_window = mean_trajectories_per_window(windows);
  summary.rollout_idle_fraction = rollout_idle_fraction(windows);
  {
    core::JsonlWriter metrics(dir / "metrics.jsonl", true);
    for (const auto& w : windows) metrics.write(json(w));
  }
  json doc = {{"summary", summary}, {"windows", windows}};
  std::ofstream(dir / "report.json") << doc.dump(2) << "\n";
  std::ofstream(dir / "report.md") << render_markdown({load_run(dir)});
}

void write_train_steps(const fs::path& path, const std::vector<TrainStepRecord>& records) {
  core::JsonlWriter out(path, true);
  for (const auto& r : records) {
    out.write({{"step", r.step},
               {"busy_start_ms", r.busy.start_ms},
               {"busy_end_ms", r.busy.end_ms},
               {"staleness", r.staleness},
               {"group_sizes", r.group_sizes},
               {"loss", r.loss}});
  }
}

}  // namespace

RunConfig with_run_id(RunConfig config) {
  if (config.run_id.empty()) {
    config.run_id = to_string(config.mode) + "-" + std::to_string(config.seed) + "-" + std::to_string(core::now_ms());
  }
  return config;
}

RunResult run(RunConfig config, const std::atomic<bool>* stop) {
  config = with_run_id(std::move(config));
  validate(config);
  std::atomic<bool> never{false};
  const std::atomic<bool>& stop_flag = stop ? *stop : never;

  RunResult result;
  RunSummary summary = base_summary(config);
  auto pool = start_pool(config, summary.warnings);
  result.dir = prepare_dir(config);
  const auto& dir = result.dir;

  auto gw = make_gateway(config, dir);
  buffer::SampleBuffer buf(buffer_config(config), std::make_shared<buffer::JsonlSideStore>(dir / "over_stale.jsonl"));
  core::JsonlWriter traj_out(dir / "trajectories.jsonl", true);
  core::JsonlWriter packs_out(dir / "packs.jsonl", true);
  core::JsonlWriter ckpt_out(dir / "checkpoints.jsonl", true);

  RolloutRunner runner(config, *pool, *gw, buf, RolloutSinks{&traj_out, &ckpt_out});
  SimTrainer trainer(config, buf, &packs_out);

  const std::int64_t start = mono_ms();
  if (config.total_steps > 0) {
    runner.attach(buf);
    runner.start();
    trainer.run(config.total_steps, stop_flag);
    runner.stop();
  }
  buf.close();
  summary.wall_ms = mono_ms() - start;

  WindowInputs in;
  in.run_start_ms = start;
  in.rollout_workers = config.pool_size;
  in.rollout_busy = runner.busy_intervals();
  in.trajectory_done_ms = runner.completion_times();
  in.train = trainer.records();
  for (const auto& r : in.train) in.bumps.push_back(r.busy.end_ms);
  result.windows = compute_windows(in);

  fill_rollout(summary, runner.stats());
  fill_trainer(summary, trainer.totals(), trainer.records().size());
  fill_gateway(summary, *gw);
  summary.groups_evicted = buf.stats().evicted;
  write_train_steps(dir / "train_steps.jsonl", trainer.records());
  write_report(dir, summary, result.windows);
  result.summary = summary;
  return result;
}

RunResult serve_buffer(RunConfig config, const std::atomic<bool>& stop,
                       const std::function<void(int, int)>& on_ready) {
  config = with_run_id(std::move(config));
  validate(config);

  RunResult result;
  RunSummary summary = base_summary(config);
  auto pool = start_pool(config, summary.warnings);
  result.dir = prepare_dir(config);
  const auto& dir = result.dir;

  auto gw = make_gateway(config, dir);
  buffer::SampleBuffer buf(buffer_config(config), std::make_shared<buffer::JsonlSideStore>(dir / "over_stale.jsonl"));
  buffer::BufferServer buffer_server(buf);
  gateway::GatewayServer gateway_server(*gw);
  const int buffer_port = buffer_server.start(config.buffer_host, config.buffer_port);
  int gateway_port = 0;
  try {
    gateway_port = gateway_server.start(config.buffer_host, config.gateway_port);
  } catch (...) {
    buffer_server.stop();
    throw;
  }

  core::JsonlWriter traj_out(dir / "trajectories.jsonl", true);
  core::JsonlWriter ckpt_out(dir / "checkpoints.jsonl", true);
  RolloutRunner runner(config, *pool, *gw, buf, RolloutSinks{&traj_out, &ckpt_out});
  runner.attach(buf);

  const std::int64_t start = mono_ms();
  runner.start();
  if (on_ready) on_ready(buffer_port, gateway_port);
  const core::PolicyVersion target{config.total_steps};
  while (!stop.load()) {
    if (config.total_steps > 0 && buf.stats().current_version >= target) break;
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
  runner.stop();
  buf.close();
  buffer_server.stop();
  gateway_server.stop();
  summary.wall_ms = mono_ms() - start;

  WindowInputs in;
  in.run_start_ms = start;
  in.rollout_workers = config.pool_size;
  in.rollout_busy = runner.busy_intervals();
  in.trajectory_done_ms = runner.completion_times();
  in.bumps = runner.bump_times();
  result.windows = compute_windows(in);

  fill_rollout(summary, runner.stats());
  fill_gateway(summary, *gw);
  const auto bs = buf.stats();
  summary.groups_evicted = bs.evicted;
  summary.groups_trained = bs.dequeued;
  write_report(dir, summary, result.windows);
  result.summary = summary;
  return result;
}

RunResult run_trainer(RunConfig config, const std::string& buffer_url, const std::atomic<bool>& stop,
                      std::int64_t handshake_timeout_ms) {
  config = with_run_id(std::move(config));
  validate(config);
  buffer::HttpBufferClient client(buffer_url);
  client.handshake(handshake_timeout_ms);

  RunResult result;
  result.dir = prepare_dir(config);
  RunSummary summary = base_summary(config);
  core::JsonlWriter packs_out(result.dir / "packs.jsonl", true);
  SimTrainer trainer(config, client, &packs_out);

  const std::int64_t start = mono_ms();
  trainer.run(config.total_steps, stop);
  summary.wall_ms = mono_ms() - start;
  fill_trainer(summary, trainer.totals(), trainer.records().size());
  write_train_steps(result.dir / "train_steps.jsonl", trainer.records());
  summary.steps = trainer.records().size();
  result.summary = summary;
  return result;
}

}  // namespace rollforge::orch
