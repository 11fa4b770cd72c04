#include "rollforge/orch/rollout.hpp"

#include <algorithm>
#include <chrono>

#include "rollforge/core/clock.hpp"
#include "rollforge/core/hash.hpp"

namespace rollforge::orch {

namespace {

std::int64_t mono_ms() { return static_cast<std::int64_t>(core::steady_ms()); }

std::string group_id(std::size_t index) { return "g" + std::to_string(index); }

}  // namespace

RolloutRunner::RolloutRunner(const RunConfig& config, env::EnvPool& pool, gateway::Gateway& gateway,
                             buffer::BufferApi& buffer, RolloutSinks sinks)
    : config_(config), pool_(pool), gateway_(gateway), buffer_(buffer), sinks_(sinks) {
  validate(config_);
  seen_version_ = gateway_.serving_version();
}

RolloutRunner::~RolloutRunner() { stop(); }

void RolloutRunner::start() {
  {
    std::lock_guard lock(mu_);
    if (started_) return;
    started_ = true;
    stopping_ = false;
    if (config_.mode == Mode::sync) {
      ++credits_;
      credit_pins_.push_back(seen_version_);
    }
  }
  for (std::size_t w = 0; w < config_.pool_size; ++w) workers_.emplace_back([this, w] { worker_loop(w); });
}

void RolloutRunner::stop() {
  {
    std::lock_guard lock(mu_);
    stopping_ = true;
    jobs_.clear();
    credits_ = 0;
    credit_pins_.clear();
  }
  cv_.notify_all();
  if (attached_) {
    attached_->set_observer({});
    attached_ = nullptr;
  }
  for (auto& t : workers_) {
    if (t.joinable()) t.join();
  }
  workers_.clear();
}

void RolloutRunner::grant(std::size_t batches, core::PolicyVersion pin) {
  {
    std::lock_guard lock(mu_);
    if (stopping_) return;
    credits_ += batches;
    for (std::size_t i = 0; i < batches; ++i) credit_pins_.push_back(pin);
  }
  cv_.notify_all();
}

void RolloutRunner::on_version(core::PolicyVersion v) {
  {
    std::lock_guard lock(mu_);
    if (v <= seen_version_) return;
    seen_version_ = v;
    bumps_.push_back(mono_ms());
  }
  if (v > gateway_.serving_version()) gateway_.set_serving_version(v);
  if (config_.mode == Mode::sync && config_.sync_lookahead() == 0) grant(1, v);
}

void RolloutRunner::attach(buffer::SampleBuffer& buffer) {
  buffer::BufferObserver obs;
  obs.on_version = [this](core::PolicyVersion v) { on_version(v); };
  if (config_.mode == Mode::sync && config_.sync_lookahead() > 0) {
    obs.on_dequeue = [this](std::size_t groups, core::PolicyVersion current) {
      if (groups > 0) grant(1, current);
    };
  }
  buffer.set_observer(std::move(obs));
  attached_ = &buffer;
}

std::vector<Interval> RolloutRunner::busy_intervals() const {
  std::lock_guard lock(mu_);
  return busy_;
}

std::vector<std::int64_t> RolloutRunner::completion_times() const {
  std::lock_guard lock(mu_);
  return done_;
}

std::vector<std::int64_t> RolloutRunner::bump_times() const {
  std::lock_guard lock(mu_);
  return bumps_;
}

RolloutStats RolloutRunner::stats() const {
  std::lock_guard lock(mu_);
  return stats_;
}

void RolloutRunner::enqueue_group_locked(core::PolicyVersion pin) {
  const std::size_t index = next_group_++;
  PendingGroup pg;
  pg.pin = pin;
  pg.members.resize(config_.group_size);
  pending_.emplace(index, std::move(pg));
  for (std::size_t m = 0; m < config_.group_size; ++m) jobs_.push_back(Job{index, m, pin});
}

std::optional<RolloutRunner::Job> RolloutRunner::next_job() {
  std::unique_lock lock(mu_);
  for (;;) {
    if (stopping_) return std::nullopt;
    if (jobs_.empty()) {
      if (config_.mode == Mode::async) {
        enqueue_group_locked(gateway_.serving_version());
      } else if (credits_ > 0) {
        --credits_;
        const auto pin = credit_pins_.front();
        credit_pins_.pop_front();
        for (std::size_t g = 0; g < config_.groups_per_batch(); ++g) enqueue_group_locked(pin);
      }
    }
    if (!jobs_.empty()) {
      Job job = jobs_.front();
      jobs_.pop_front();
      return job;
    }
    cv_.wait(lock);
  }
}

void RolloutRunner::worker_loop(std::size_t) {
  while (auto job = next_job()) {
    const std::int64_t start = mono_ms();
    auto traj = run_trajectory(*job);
    std::this_thread::sleep_until(std::chrono::steady_clock::now() +
                                  std::chrono::milliseconds(std::max<std::int64_t>(
                                      0, start + config_.rollout_time_ms - mono_ms())));
    const std::int64_t end = mono_ms();
    {
      std::lock_guard lock(mu_);
      busy_.push_back(Interval{start, end});
      if (traj) done_.push_back(end);
    }
    finish(*job, std::move(traj));
  }
}

std::optional<core::Trajectory> RolloutRunner::run_trajectory(const Job& job) {
  const auto& tasks = config_.env.tasks;
  core::Trajectory traj;
  traj.group_id = group_id(job.group_index);
  traj.traj_id = traj.group_id + "-m" + std::to_string(job.member);
  traj.task_id = tasks.empty() ? "task" : tasks[job.group_index % tasks.size()];
  traj.policy_version = job.pin;
  traj.created_at = core::now_ms();

  const std::uint64_t env_seed =
      core::Fnv1a{}.add(config_.seed).add(config_.env.seed).add(static_cast<std::uint64_t>(job.group_index)).digest();
  ckpt::TriggerPolicy policy;
  if (!config_.env.high_risk_patterns.empty()) policy.high_risk_patterns = config_.env.high_risk_patterns;

  try {
    env::LeasedEnv lease(pool_, traj.task_id);
    traj.env_id = lease.handle().env_id;
    auto reset = lease.reset(traj.task_id, env_seed);
    std::optional<ckpt::VersionTree> tree;
    if (config_.checkpoints) tree.emplace(traj.traj_id);

    core::TokenSeq history = tokenizer_.encode(reset.observation);
    std::string obs_ref = reset.observation_ref;
    std::vector<std::string> actions = reset.actions;
    std::uint64_t tokens = 0;
    bool done = false;

    for (int i = 0; i < config_.max_env_steps; ++i) {
      const auto t0 = mono_ms();
      gateway::InferenceRequest req;
      req.prompt = history;
      req.traj_id = traj.traj_id;
      req.step = i;
      req.pinned_version = job.pin;
      req.sample_seed = core::Fnv1a{}
                            .add(config_.seed)
                            .add(static_cast<std::uint64_t>(job.group_index))
                            .add(static_cast<std::uint64_t>(job.member))
                            .add(static_cast<std::uint64_t>(i))
                            .digest();
      auto rec = gateway_.infer(req);
      traj.policy_version = rec.policy_version;

      core::Step step;
      step.index = i;
      step.observation_ref = obs_ref;
      step.prompt_tokens = history;
      step.output_tokens = rec.output_tokens;
      step.output_logprobs = rec.output_logprobs;
      step.output_dists = rec.output_dists;
      if (!rec.teacher_missing) {
        step.teacher_logprobs = rec.teacher_logprobs;
        step.teacher_dists = rec.teacher_dists;
      }
      if (!actions.empty()) {
        const auto pick = rec.output_tokens.empty() ? 0 : static_cast<std::size_t>(rec.output_tokens.front());
        step.action = actions[pick % actions.size()];
      } else {
        step.action = tokenizer_.decode(rec.output_tokens);
      }
      tokens += rec.output_tokens.size();

      if (tree) {
        if (auto trigger = policy.decide(i, step.action)) {
          if (tree->checkpoint(lease, *trigger, i, tokens)) {
            std::lock_guard lock(mu_);
            ++stats_.checkpoints;
            if (sinks_.checkpoints) sinks_.checkpoints->write(tree->list_anchors().back());
          }
        }
      }

      auto result = lease.step(step.action);
      step.reward = result.reward;
      step.error = result.error;
      step.wall_time_ms = mono_ms() - t0;
      traj.steps.push_back(std::move(step));

      if (result.error) {
        if (tree) {
          if (auto anchor = tree->current()) {
            tree->rollback(*anchor, lease);
            std::lock_guard lock(mu_);
            ++stats_.rollbacks;
          }
        }
        traj.status = core::TrajectoryStatus::failed;
        break;
      }
      if (result.done) {
        done = true;
        break;
      }
      history.insert(history.end(), rec.output_tokens.begin(), rec.output_tokens.end());
      auto fresh = tokenizer_.encode("\n" + result.observation);
      history.insert(history.end(), fresh.begin(), fresh.end());
      obs_ref = result.observation_ref;
      actions = result.actions;
    }
    if (traj.status != core::TrajectoryStatus::failed) {
      traj.status = done ? core::TrajectoryStatus::completed : core::TrajectoryStatus::truncated;
    }
    core::validate(traj);
  } catch (const std::exception&) {
    std::lock_guard lock(mu_);
    ++stats_.trajectory_failures;
    return std::nullopt;
  }

  if (sinks_.trajectories) sinks_.trajectories->write_line(core::serialize_trajectory(traj));
  std::lock_guard lock(mu_);
  ++stats_.trajectories;
  return traj;
}

// A sync batch is only granted once, so a lost group is regenerated under the same pin.
void RolloutRunner::replace_locked(core::PolicyVersion pin) {
  if (config_.mode != Mode::sync || stopping_) return;
  enqueue_group_locked(pin);
  cv_.notify_all();
}

void RolloutRunner::finish(const Job& job, std::optional<core::Trajectory> traj) {
  core::SampleGroup group;
  core::PolicyVersion pg_pin;
  {
    std::lock_guard lock(mu_);
    auto it = pending_.find(job.group_index);
    if (it == pending_.end()) return;
    auto& pg = it->second;
    pg.members[job.member] = std::move(traj);
    if (++pg.finished < pg.members.size()) return;
    pg_pin = pg.pin;
    group.group_id = group_id(job.group_index);
    group.expected_size = config_.group_size;
    group.policy_version = pg.pin;
    for (auto& m : pg.members) {
      if (m) group.trajectories.push_back(std::move(*m));
    }
    pending_.erase(it);
    if (group.trajectories.empty()) {
      ++stats_.groups_abandoned;
      replace_locked(pg_pin);
      return;
    }
    group.task_id = group.trajectories.front().task_id;
  }
  // Partial groups still go to the buffer, whose completeness guard refuses them.
  bool admitted = false;
  try {
    admitted = buffer_.submit_group(group).admitted;
  } catch (const std::exception&) {
  }
  std::lock_guard lock(mu_);
  ++stats_.groups_submitted;
  if (!admitted) {
    ++stats_.groups_rejected;
    replace_locked(pg_pin);
  }
}

}  // namespace rollforge::orch
