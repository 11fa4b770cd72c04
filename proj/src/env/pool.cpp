#include "rollforge/env/pool.hpp"

#include <algorithm>
#include <chrono>
#include <future>

namespace rollforge::env {

std::string to_string(EnvState state) {
  switch (state) {
    case EnvState::warming: return "warming";
    case EnvState::ready: return "ready";
    case EnvState::leased: return "leased";
    case EnvState::resetting: return "resetting";
    case EnvState::dead: return "dead";
  }
  return "dead";
}

void validate(const PoolConfig& c) {
  if (c.pool_size == 0) throw ValidationError("pool_size", "must be positive");
  if (c.warmup_batch == 0) throw ValidationError("warmup_batch", "must be positive");
  if (c.warmup_batch > c.pool_size) throw ValidationError("warmup_batch", "must not exceed pool_size");
  if (c.lease_timeout_ms <= 0) throw ValidationError("lease_timeout_ms", "must be positive");
  if (c.replenish_interval_ms <= 0) throw ValidationError("replenish_interval_ms", "must be positive");
}

EnvPool::EnvPool(PoolConfig config, EnvFactory factory) : config_(std::move(config)), factory_(std::move(factory)) {
  validate(config_);
  counters_.pool_size = config_.pool_size;
}

EnvPool::~EnvPool() {
  {
    std::lock_guard lock(maint_mu_);
    stopping_ = true;
  }
  maint_cv_.notify_all();
  if (maintenance_.joinable()) maintenance_.join();
  std::vector<std::shared_ptr<Slot>> slots;
  {
    std::lock_guard lock(mu_);
    slots.swap(slots_);
  }
  for (auto& slot : slots) {
    std::lock_guard lock(slot->env_mu);
    try {
      if (slot->env) slot->env->close();
    } catch (const std::exception&) {
    }
  }
}

EnvHandle EnvPool::handle_of(const Slot& slot) {
  return EnvHandle{slot.env_id, slot.endpoint, slot.state, slot.task, slot.lease_id};
}

std::shared_ptr<EnvPool::Slot> EnvPool::spawn(std::size_t ordinal, std::string* error) {
  try {
    auto env = factory_(ordinal);
    if (!env) throw Error("factory returned no environment");
    env->start();
    auto slot = std::make_shared<Slot>();
    slot->env_id = "env-" + std::to_string(ordinal);
    slot->endpoint = env->endpoint();
    slot->env = std::move(env);
    return slot;
  } catch (const std::exception& e) {
    if (error) *error = e.what();
    return nullptr;
  }
}

core::JobStatus EnvPool::prewarm() {
  std::vector<core::JobError> errors;
  std::size_t started = 0;
  for (std::size_t begin = 0; begin < config_.pool_size; begin += config_.warmup_batch) {
    const std::size_t end = std::min(config_.pool_size, begin + config_.warmup_batch);
    std::vector<std::size_t> ordinals;
    {
      std::lock_guard lock(mu_);
      for (std::size_t i = begin; i < end; ++i) ordinals.push_back(next_ordinal_++);
      in_flight_spawns_ += ordinals.size();
    }
    std::vector<std::future<std::pair<std::shared_ptr<Slot>, std::string>>> batch;
    for (std::size_t ordinal : ordinals) {
      batch.push_back(std::async(std::launch::async, [this, ordinal] {
        std::string err;
        auto slot = spawn(ordinal, &err);
        return std::make_pair(std::move(slot), std::move(err));
      }));
    }
    for (std::size_t i = 0; i < batch.size(); ++i) {
      auto [slot, err] = batch[i].get();
      std::lock_guard lock(mu_);
      --in_flight_spawns_;
      if (slot) {
        slot->state = EnvState::ready;
        slots_.push_back(std::move(slot));
        ++started;
      } else {
        ++counters_.spawn_failures;
        errors.push_back({"env-" + std::to_string(ordinals[i]), "start_failed", err});
      }
    }
    cv_.notify_all();
  }
  if (!maintenance_.joinable()) maintenance_ = std::thread([this] { maintenance_loop(); });
  return core::make_job_status(started, std::move(errors));
}

void EnvPool::maintenance_loop() {
  std::unique_lock mlock(maint_mu_);
  while (!stopping_) {
    maint_cv_.wait_for(mlock, std::chrono::milliseconds(config_.replenish_interval_ms), [&] { return stopping_ || wake_; });
    if (stopping_) break;
    wake_ = false;
    mlock.unlock();

    std::vector<std::shared_ptr<Slot>> to_recycle;
    std::size_t missing = 0;
    {
      std::lock_guard lock(mu_);
      std::erase_if(slots_, [](const auto& s) { return s->state == EnvState::dead; });
      for (auto& s : slots_) {
        if (s->state == EnvState::resetting) to_recycle.push_back(s);
      }
      if (config_.replenish) {
        const std::size_t live = slots_.size() + in_flight_spawns_;
        missing = live < config_.pool_size ? config_.pool_size - live : 0;
        in_flight_spawns_ += missing;
      }
    }
    for (auto& slot : to_recycle) {
      bool ok = true;
      {
        std::lock_guard elock(slot->env_mu);
        try {
          slot->env->recycle();
        } catch (const std::exception&) {
          ok = false;
        }
      }
      std::lock_guard lock(mu_);
      if (slot->state == EnvState::resetting) {
        slot->state = ok ? EnvState::ready : EnvState::dead;
        slot->task.reset();
      }
    }
    if (!to_recycle.empty()) cv_.notify_all();
    for (std::size_t i = 0; i < missing; ++i) {
      std::size_t ordinal;
      {
        std::lock_guard lock(mu_);
        ordinal = next_ordinal_++;
      }
      auto slot = spawn(ordinal, nullptr);
      std::lock_guard lock(mu_);
      --in_flight_spawns_;
      if (slot) {
        slot->state = EnvState::ready;
        slots_.push_back(std::move(slot));
        ++counters_.replacements_spawned;
        cv_.notify_all();
      } else {
        ++counters_.spawn_failures;
      }
    }
    mlock.lock();
  }
}

EnvHandle EnvPool::lease(const std::string& task_id) { return lease(task_id, config_.lease_timeout_ms); }

EnvHandle EnvPool::lease(const std::string& task_id, std::int64_t timeout_ms) {
  std::unique_lock lock(mu_);
  const std::uint64_t ticket = next_ticket_++;
  waiters_.push_back(ticket);
  auto first_ready = [&] {
    return std::find_if(slots_.begin(), slots_.end(), [](const auto& s) { return s->state == EnvState::ready; });
  };
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
  const bool granted = cv_.wait_until(lock, deadline, [&] {
    return waiters_.front() == ticket && first_ready() != slots_.end();
  });
  if (!granted) {
    std::erase(waiters_, ticket);
    cv_.notify_all();
    throw PoolExhausted("no environment became ready within " + std::to_string(timeout_ms) + " ms", stats_locked());
  }
  waiters_.pop_front();
  auto& slot = *first_ready();
  slot->state = EnvState::leased;
  slot->lease_id = ++next_lease_;
  slot->task = task_id;
  slot->episode_done = false;
  ++counters_.leases_granted;
  EnvHandle h = handle_of(*slot);
  cv_.notify_all();
  return h;
}

std::shared_ptr<EnvPool::Slot> EnvPool::leased_slot(const EnvHandle& h) {
  std::lock_guard lock(mu_);
  auto it = std::find_if(slots_.begin(), slots_.end(), [&](const auto& s) { return s->env_id == h.env_id; });
  if (it == slots_.end()) throw StaleLease(h.env_id + " is closed or was replaced");
  const auto& slot = *it;
  if (slot->state == EnvState::dead) throw StaleLease(h.env_id + " is dead");
  if (slot->state != EnvState::leased || slot->lease_id != h.lease_id) {
    throw StaleLease(h.env_id + " is not leased under lease " + std::to_string(h.lease_id));
  }
  return slot;
}

void EnvPool::mark_dead(const std::shared_ptr<Slot>& slot) {
  {
    std::lock_guard lock(mu_);
    slot->state = EnvState::dead;
  }
  {
    std::lock_guard lock(maint_mu_);
    wake_ = true;
  }
  maint_cv_.notify_all();
}

ResetResult EnvPool::reset(const EnvHandle& h, const std::string& task_id, std::uint64_t seed) {
  auto slot = leased_slot(h);
  std::lock_guard elock(slot->env_mu);
  try {
    auto r = slot->env->reset(task_id, seed);
    std::lock_guard lock(mu_);
    slot->task = task_id;
    slot->episode_done = false;
    return r;
  } catch (const WireError&) {
    mark_dead(slot);
    throw;
  }
}

StepResult EnvPool::step(const EnvHandle& h, const std::string& action) {
  auto slot = leased_slot(h);
  std::lock_guard elock(slot->env_mu);
  {
    std::lock_guard lock(mu_);
    if (slot->episode_done) throw ProtocolError("step after episode end on " + h.env_id);
  }
  try {
    auto r = slot->env->step(action);
    if (r.done) {
      std::lock_guard lock(mu_);
      slot->episode_done = true;
    }
    return r;
  } catch (const WireError&) {
    mark_dead(slot);
    throw;
  }
}

SnapshotInfo EnvPool::snapshot(const EnvHandle& h) {
  auto slot = leased_slot(h);
  std::lock_guard elock(slot->env_mu);
  try {
    return slot->env->snapshot();
  } catch (const WireError&) {
    mark_dead(slot);
    throw;
  }
}

std::string EnvPool::restore(const EnvHandle& h, const std::string& snapshot_id) {
  auto slot = leased_slot(h);
  std::lock_guard elock(slot->env_mu);
  try {
    auto hash = slot->env->restore(snapshot_id);
    std::lock_guard lock(mu_);
    slot->episode_done = false;
    return hash;
  } catch (const WireError&) {
    mark_dead(slot);
    throw;
  }
}

void EnvPool::release(const EnvHandle& h) {
  {
    std::lock_guard lock(mu_);
    auto it = std::find_if(slots_.begin(), slots_.end(), [&](const auto& s) { return s->env_id == h.env_id; });
    if (it != slots_.end() && (*it)->state == EnvState::dead && (*it)->lease_id == h.lease_id) return;
    if (it == slots_.end() || (*it)->state != EnvState::leased || (*it)->lease_id != h.lease_id) {
      ++counters_.double_release_warnings;
      return;
    }
    (*it)->state = EnvState::resetting;
  }
  {
    std::lock_guard lock(maint_mu_);
    wake_ = true;
  }
  maint_cv_.notify_all();
}

void EnvPool::close(const EnvHandle& h) {
  std::shared_ptr<Slot> slot;
  {
    std::lock_guard lock(mu_);
    auto it = std::find_if(slots_.begin(), slots_.end(), [&](const auto& s) { return s->env_id == h.env_id; });
    if (it == slots_.end()) return;
    slot = *it;
    slot->state = EnvState::dead;
    slots_.erase(it);
  }
  {
    std::lock_guard elock(slot->env_mu);
    try {
      slot->env->close();
    } catch (const std::exception&) {
    }
  }
  {
    std::lock_guard lock(maint_mu_);
    wake_ = true;
  }
  maint_cv_.notify_all();
}

PoolStats EnvPool::stats_locked() const {
  PoolStats s = counters_;
  s.warming = in_flight_spawns_;
  for (const auto& slot : slots_) {
    switch (slot->state) {
      case EnvState::warming: ++s.warming; break;
      case EnvState::ready: ++s.ready; break;
      case EnvState::leased: ++s.leased; break;
      case EnvState::resetting: ++s.resetting; break;
      case EnvState::dead: ++s.dead; break;
    }
  }
  s.waiting = waiters_.size();
  return s;
}

PoolStats EnvPool::stats() const {
  std::lock_guard lock(mu_);
  return stats_locked();
}

std::vector<EnvHandle> EnvPool::handles() const {
  std::lock_guard lock(mu_);
  std::vector<EnvHandle> out;
  for (const auto& s : slots_) out.push_back(handle_of(*s));
  return out;
}

LeasedEnv::LeasedEnv(EnvPool& pool, const std::string& task_id) : pool_(pool), handle_(pool.lease(task_id)) {}

LeasedEnv::~LeasedEnv() { pool_.release(handle_); }

}  // namespace rollforge::env
