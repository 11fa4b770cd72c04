#include "rollforge/buffer/buffer.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <thread>

#include "rollforge/core/clock.hpp"

namespace rollforge::buffer {

using nlohmann::json;

void validate(const BufferConfig& c) {
  if (c.group_size == 0) throw ValidationError("group_size", "must be positive");
  if (c.global_batch_size == 0) throw ValidationError("global_batch_size", "must be positive");
  if (c.global_batch_size % c.group_size != 0) {
    throw ValidationError("global_batch_size", "must be a multiple of group_size (" + std::to_string(c.group_size) + ")");
  }
  if (c.epochs < 1) throw ValidationError("epochs", "must be at least 1");
  if (c.port < 0 || c.port > 65535) throw ValidationError("port", "out of range");
  if (c.rate_window_ms <= 0) throw ValidationError("rate_window_ms", "must be positive");
}

namespace {

template <typename T>
void env_override(const char* name, T& field) {
  const char* raw = std::getenv(name);
  if (raw == nullptr || *raw == '\0') return;
  try {
    std::size_t used = 0;
    const long long v = std::stoll(raw, &used);
    if (used != std::string(raw).size() || v < 0) throw std::invalid_argument(raw);
    field = static_cast<T>(v);
  } catch (const std::exception&) {
    throw ConfigError(std::string(name) + " must be a non-negative integer, got '" + raw + "'");
  }
}

}  // namespace

BufferConfig apply_env(BufferConfig c) {
  env_override("RL_GROUP_SIZE", c.group_size);
  env_override("RL_OFF_BY_N", c.off_by_n);
  env_override("SLIME_GLOBAL_BATCH_SIZE", c.global_batch_size);
  env_override("RL_EPOCH", c.epochs);
  env_override("BUFFER_SERVER_PORT", c.port);
  return c;
}

void to_json(json& j, const BufferStats& s) {
  json hist = json::object();
  for (const auto& [v, n] : s.per_version) hist[std::to_string(v)] = n;
  j = {{"occupancy", s.occupancy},
       {"per_version", hist},
       {"producer_rate", s.producer_rate},
       {"consumer_rate", s.consumer_rate},
       {"admitted", s.admitted},
       {"rejected", s.rejected},
       {"dequeued", s.dequeued},
       {"evicted", s.evicted},
       {"batches_dequeued", s.batches_dequeued},
       {"current_version", s.current_version.value}};
}

void from_json(const json& j, BufferStats& s) {
  s.occupancy = j.at("occupancy").get<std::size_t>();
  s.per_version.clear();
  for (const auto& [k, v] : j.at("per_version").items()) s.per_version[std::stoull(k)] = v.get<std::size_t>();
  s.producer_rate = j.at("producer_rate").get<double>();
  s.consumer_rate = j.at("consumer_rate").get<double>();
  s.admitted = j.at("admitted").get<std::uint64_t>();
  s.rejected = j.at("rejected").get<std::uint64_t>();
  s.dequeued = j.at("dequeued").get<std::uint64_t>();
  s.evicted = j.at("evicted").get<std::uint64_t>();
  s.batches_dequeued = j.at("batches_dequeued").get<std::uint64_t>();
  s.current_version = core::PolicyVersion{j.at("current_version").get<std::uint64_t>()};
}

void MemorySideStore::put(const core::SampleGroup& group, core::PolicyVersion current) {
  std::lock_guard lock(mu_);
  entries_.emplace_back(group, current);
}

std::vector<std::pair<core::SampleGroup, core::PolicyVersion>> MemorySideStore::entries() const {
  std::lock_guard lock(mu_);
  return entries_;
}

void JsonlSideStore::put(const core::SampleGroup& group, core::PolicyVersion current) {
  out_.write(json{{"tag", "over_stale"}, {"evicted_at_version", current.value}, {"group", group}});
  out_.flush();
}

SampleBuffer::SampleBuffer(BufferConfig config, std::shared_ptr<SideStore> side_store)
    : config_(config),
      side_store_(side_store ? std::move(side_store) : std::make_shared<MemorySideStore>()),
      created_at_(core::steady_ms()) {
  validate(config_);
}

Admission SampleBuffer::submit_group(const core::SampleGroup& g) {
  Admission a;
  const std::size_t n = g.trajectories.size();
  if (n < config_.group_size) {
    a.reason = "incomplete group";
    a.missing = config_.group_size - n;
  } else if (n > config_.group_size || g.expected_size != config_.group_size) {
    a.reason = "group size " + std::to_string(n) + " (expected " + std::to_string(g.expected_size) +
               ") does not match configured " + std::to_string(config_.group_size);
  } else {
    for (const auto& t : g.trajectories) {
      if (t.policy_version != g.policy_version) {
        a.reason = "mixed policy versions";
        break;
      }
      if (t.group_id != g.group_id) {
        a.reason = "member " + t.traj_id + " belongs to another group";
        break;
      }
    }
  }
  std::unique_lock lock(mu_);
  if (!a.reason.empty()) {
    ++counters_.rejected;
    return a;
  }
  a.admitted = true;
  entries_.push_back({g, core::now_ms()});
  ++counters_.admitted;
  submit_events_.emplace_back(core::steady_ms(), 1);
  lock.unlock();
  cv_.notify_all();
  return a;
}

bool SampleBuffer::eligible(const Entry& e, core::PolicyVersion current) const {
  const auto v = e.group.policy_version;
  return v <= current && current.value - v.value <= config_.off_by_n;
}

std::size_t SampleBuffer::count_eligible(core::PolicyVersion current) const {
  return static_cast<std::size_t>(
      std::count_if(entries_.begin(), entries_.end(), [&](const Entry& e) { return eligible(e, current); }));
}

DequeueResult SampleBuffer::dequeue(core::PolicyVersion current, std::size_t num_groups, std::int64_t timeout_ms) {
  DequeueResult out;
  if (num_groups == 0) return out;
  std::unique_lock lock(mu_);
  auto ready = [&] { return closed_ || count_eligible(current) >= num_groups; };
  if (timeout_ms < 0) {
    cv_.wait(lock, ready);
  } else if (!cv_.wait_for(lock, std::chrono::milliseconds(timeout_ms), ready)) {
    out.would_block = true;
    return out;
  }
  if (count_eligible(current) < num_groups) {
    out.would_block = true;
    return out;
  }
  // Linearization point: eligibility is fixed against `current` here.
  for (auto it = entries_.begin(); it != entries_.end() && out.groups.size() < num_groups;) {
    if (eligible(*it, current)) {
      out.groups.push_back(std::move(it->group));
      it = entries_.erase(it);
    } else {
      ++it;
    }
  }
  counters_.dequeued += out.groups.size();
  ++counters_.batches_dequeued;
  dequeue_events_.emplace_back(core::steady_ms(), out.groups.size());
  auto notify = observer_.on_dequeue;
  lock.unlock();
  cv_.notify_all();
  if (notify) notify(out.groups.size(), current);
  return out;
}

std::vector<core::SampleGroup> SampleBuffer::dequeue_batch(core::PolicyVersion current) {
  return dequeue(current, config_.groups_per_batch(), -1).groups;
}

std::size_t SampleBuffer::evict_locked(core::PolicyVersion current) {
  std::size_t evicted = 0;
  for (auto it = entries_.begin(); it != entries_.end();) {
    const auto v = it->group.policy_version;
    if (v <= current && current.value - v.value > config_.off_by_n) {
      side_store_->put(it->group, current);
      it = entries_.erase(it);
      ++evicted;
    } else {
      ++it;
    }
  }
  counters_.evicted += evicted;
  return evicted;
}

std::size_t SampleBuffer::evict_stale(core::PolicyVersion current) {
  std::lock_guard lock(mu_);
  return evict_locked(current);
}

std::size_t SampleBuffer::announce_version(core::PolicyVersion current) {
  std::size_t evicted;
  std::function<void(core::PolicyVersion)> notify;
  {
    std::lock_guard lock(mu_);
    if (current < current_) {
      throw OrderingError("announced version " + std::to_string(current.value) + " is older than " +
                          std::to_string(current_.value));
    }
    current_ = current;
    evicted = evict_locked(current);
    notify = observer_.on_version;
  }
  cv_.notify_all();
  if (notify) notify(current);
  return evicted;
}

void SampleBuffer::trim(std::deque<std::pair<std::int64_t, std::size_t>>& events, std::int64_t now,
                        std::int64_t window) {
  while (!events.empty() && events.front().first < now - window) events.pop_front();
}

BufferStats SampleBuffer::stats() {
  std::lock_guard lock(mu_);
  BufferStats s = counters_;
  s.current_version = current_;
  s.occupancy = entries_.size();
  for (const auto& e : entries_) ++s.per_version[e.group.policy_version.value];
  const auto now = core::steady_ms();
  trim(submit_events_, now, config_.rate_window_ms);
  trim(dequeue_events_, now, config_.rate_window_ms);
  const double span_s = static_cast<double>(std::clamp<std::int64_t>(now - created_at_, 1, config_.rate_window_ms)) / 1000.0;
  std::size_t submitted = 0, taken = 0;
  for (const auto& [_, n] : submit_events_) submitted += n;
  for (const auto& [_, n] : dequeue_events_) taken += n;
  s.producer_rate = static_cast<double>(submitted) / span_s;
  s.consumer_rate = static_cast<double>(taken) / span_s;
  return s;
}

void SampleBuffer::set_observer(BufferObserver observer) {
  std::lock_guard lock(mu_);
  observer_ = std::move(observer);
}

void SampleBuffer::close() {
  {
    std::lock_guard lock(mu_);
    closed_ = true;
  }
  cv_.notify_all();
}

// --- HTTP ----------------------------------------------------------------------

BufferServer::BufferServer(SampleBuffer& buffer) : buffer_(buffer) {
  server_.post("/groups", [this](const json& body, const auto&) {
    const auto a = buffer_.submit_group(body.get<core::SampleGroup>());
    return json{{"admitted", a.admitted}, {"reason", a.reason}, {"missing", a.missing}};
  });
  server_.post("/dequeue", [this](const json& body, const auto&) {
    const core::PolicyVersion current{body.at("current_version").get<std::uint64_t>()};
    const auto num = body.value("num_groups", buffer_.config().groups_per_batch());
    // Bounded wait per request; clients loop for longer waits.
    const auto timeout = std::min<std::int64_t>(body.value("timeout_ms", std::int64_t{1000}), 30000);
    auto r = buffer_.dequeue(current, num, std::max<std::int64_t>(timeout, 0));
    if (r.would_block) return json{{"would_block", true}, {"groups", json::array()}};
    return json{{"would_block", false}, {"groups", r.groups}};
  });
  server_.get("/stats", [this](const json&, const auto&) {
    json j = buffer_.stats();
    const auto& c = buffer_.config();
    j["config"] = {{"group_size", c.group_size},
                   {"off_by_n", c.off_by_n},
                   {"global_batch_size", c.global_batch_size},
                   {"epochs", c.epochs}};
    return j;
  });
  server_.post("/version", [this](const json& body, const auto&) {
    const auto evicted = buffer_.announce_version(core::PolicyVersion{body.at("current_version").get<std::uint64_t>()});
    return json{{"ok", true}, {"evicted", evicted}};
  });
}

HttpBufferClient::HttpBufferClient(const std::string& base_url, int timeout_ms)
    : base_url_(base_url), timeout_ms_(timeout_ms), client_(base_url, timeout_ms + 31000) {}

void HttpBufferClient::handshake(std::int64_t timeout_ms, std::int64_t initial_backoff_ms) {
  const auto deadline = core::steady_ms() + timeout_ms;
  std::int64_t backoff = std::max<std::int64_t>(initial_backoff_ms, 1);
  std::string last;
  for (;;) {
    try {
      core::JsonHttpClient probe(base_url_, static_cast<int>(std::clamp<std::int64_t>(timeout_ms, 50, 2000)));
      probe.get("/stats");
      return;
    } catch (const WireError& e) {
      last = e.what();
    }
    if (core::steady_ms() + backoff > deadline) {
      throw WireError("buffer server at " + base_url_ + " unreachable after " + std::to_string(timeout_ms) +
                      " ms: " + last);
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(backoff));
    backoff = std::min<std::int64_t>(backoff * 2, 1000);
  }
}

Admission HttpBufferClient::submit_group(const core::SampleGroup& group) {
  const json r = client_.post("/groups", group);
  return Admission{r.at("admitted").get<bool>(), r.value("reason", std::string{}), r.value("missing", std::size_t{0})};
}

DequeueResult HttpBufferClient::dequeue(core::PolicyVersion current, std::size_t num_groups, std::int64_t timeout_ms) {
  const auto deadline = timeout_ms < 0 ? std::int64_t{-1} : core::steady_ms() + timeout_ms;
  for (;;) {
    std::int64_t slice = 1000;
    if (deadline >= 0) slice = std::max<std::int64_t>(0, std::min<std::int64_t>(slice, deadline - core::steady_ms()));
    const json r = client_.post("/dequeue", {{"current_version", current.value}, {"num_groups", num_groups}, {"timeout_ms", slice}});
    DequeueResult out;
    if (!r.value("would_block", false)) {
      out.groups = r.at("groups").get<std::vector<core::SampleGroup>>();
      return out;
    }
    if (deadline >= 0 && core::steady_ms() >= deadline) {
      out.would_block = true;
      return out;
    }
  }
}

std::size_t HttpBufferClient::announce_version(core::PolicyVersion current) {
  return client_.post("/version", {{"current_version", current.value}}).value("evicted", std::size_t{0});
}

BufferStats HttpBufferClient::stats() { return client_.get("/stats").get<BufferStats>(); }

}  // namespace rollforge::buffer
