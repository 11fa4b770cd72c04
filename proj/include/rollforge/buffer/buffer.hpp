#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "rollforge/core/http_json.hpp"
#include "rollforge/core/jsonl.hpp"
#include "rollforge/core/model.hpp"

namespace rollforge::buffer {

struct BufferConfig {
  std::size_t group_size = 4;           // RL_GROUP_SIZE
  std::uint64_t off_by_n = 1;           // RL_OFF_BY_N
  std::size_t global_batch_size = 32;   // SLIME_GLOBAL_BATCH_SIZE
  int epochs = 1;                       // RL_EPOCH
  int port = 18889;                     // BUFFER_SERVER_PORT
  std::int64_t rate_window_ms = 10000;

  std::size_t groups_per_batch() const { return global_batch_size / group_size; }
};

void validate(const BufferConfig& config);
// Overrides fields from RL_GROUP_SIZE, RL_OFF_BY_N, SLIME_GLOBAL_BATCH_SIZE, RL_EPOCH, BUFFER_SERVER_PORT.
BufferConfig apply_env(BufferConfig config);

struct Admission {
  bool admitted = false;
  std::string reason;       // empty when admitted
  std::size_t missing = 0;  // members short of group_size
};

struct DequeueResult {
  std::vector<core::SampleGroup> groups;
  bool would_block = false;
};

struct BufferStats {
  std::size_t occupancy = 0;  // resident groups
  std::map<std::uint64_t, std::size_t> per_version;
  double producer_rate = 0.0;  // groups/s admitted over the rate window
  double consumer_rate = 0.0;  // groups/s dequeued over the rate window
  std::uint64_t admitted = 0;
  std::uint64_t rejected = 0;
  std::uint64_t dequeued = 0;
  std::uint64_t evicted = 0;
  std::uint64_t batches_dequeued = 0;
  core::PolicyVersion current_version;
};

void to_json(nlohmann::json& j, const BufferStats& s);
void from_json(const nlohmann::json& j, BufferStats& s);

// What producers and the trainer see, in-process or over HTTP.
class BufferApi {
 public:
  virtual ~BufferApi() = default;
  virtual Admission submit_group(const core::SampleGroup& group) = 0;
  // timeout_ms < 0 blocks until enough eligible groups exist.
  virtual DequeueResult dequeue(core::PolicyVersion current, std::size_t num_groups, std::int64_t timeout_ms) = 0;
  // Trainer announces its version; over-stale entries are evicted. Returns the evicted count.
  virtual std::size_t announce_version(core::PolicyVersion current) = 0;
  virtual BufferStats stats() = 0;
};

// Destination for evicted over-stale groups.
class SideStore {
 public:
  virtual ~SideStore() = default;
  virtual void put(const core::SampleGroup& group, core::PolicyVersion current) = 0;
};

class MemorySideStore final : public SideStore {
 public:
  void put(const core::SampleGroup& group, core::PolicyVersion current) override;
  std::vector<std::pair<core::SampleGroup, core::PolicyVersion>> entries() const;

 private:
  mutable std::mutex mu_;
  std::vector<std::pair<core::SampleGroup, core::PolicyVersion>> entries_;
};

// One JSON line per group: {"tag":"over_stale", "evicted_at_version":N, "group":{...}}.
class JsonlSideStore final : public SideStore {
 public:
  explicit JsonlSideStore(std::filesystem::path path) : out_(std::move(path)) {}
  void put(const core::SampleGroup& group, core::PolicyVersion current) override;

 private:
  core::JsonlWriter out_;
};

// Callbacks run after the buffer lock is released.
struct BufferObserver {
  std::function<void(std::size_t groups, core::PolicyVersion current)> on_dequeue;
  std::function<void(core::PolicyVersion current)> on_version;
};

// Version-aware FIFO of complete groups. Staleness is judged at dequeue time
// against the caller's current version; submit and dequeue are linearizable.
class SampleBuffer final : public BufferApi {
 public:
  explicit SampleBuffer(BufferConfig config, std::shared_ptr<SideStore> side_store = nullptr);

  Admission submit_group(const core::SampleGroup& group) override;
  DequeueResult dequeue(core::PolicyVersion current, std::size_t num_groups, std::int64_t timeout_ms) override;
  // Blocking dequeue of exactly global_batch_size / group_size groups.
  std::vector<core::SampleGroup> dequeue_batch(core::PolicyVersion current);
  std::size_t evict_stale(core::PolicyVersion current);
  std::size_t announce_version(core::PolicyVersion current) override;
  BufferStats stats() override;

  void set_observer(BufferObserver observer);

  // Wakes every blocked dequeue with would_block; later calls do not block.
  void close();
  const BufferConfig& config() const noexcept { return config_; }

 private:
  struct Entry {
    core::SampleGroup group;
    std::int64_t enqueued_at = 0;
  };

  bool eligible(const Entry& e, core::PolicyVersion current) const;
  std::size_t count_eligible(core::PolicyVersion current) const;
  std::size_t evict_locked(core::PolicyVersion current);
  static void trim(std::deque<std::pair<std::int64_t, std::size_t>>& events, std::int64_t now, std::int64_t window);

  BufferConfig config_;
  std::shared_ptr<SideStore> side_store_;
  const std::int64_t created_at_;

  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Entry> entries_;
  core::PolicyVersion current_;
  bool closed_ = false;
  BufferObserver observer_;
  BufferStats counters_;
  std::deque<std::pair<std::int64_t, std::size_t>> submit_events_;
  std::deque<std::pair<std::int64_t, std::size_t>> dequeue_events_;
};

// HTTP front (default port 18889):
//   POST /groups {SampleGroup} -> {admitted, reason, missing}
//   POST /dequeue {current_version, num_groups, timeout_ms} -> {groups} | {would_block:true}
//   GET  /stats, POST /version {current_version}
class BufferServer {
 public:
  explicit BufferServer(SampleBuffer& buffer);
  int start(const std::string& host, int port) { return server_.start(host, port); }
  void stop() { server_.stop(); }
  std::string base_url() const { return server_.base_url(); }

 private:
  SampleBuffer& buffer_;
  core::JsonHttpServer server_;
};

class HttpBufferClient final : public BufferApi {
 public:
  explicit HttpBufferClient(const std::string& base_url, int timeout_ms = 5000);

  // Retries GET /stats with exponential backoff until it answers; throws WireError
  // naming the endpoint after `timeout_ms`.
  void handshake(std::int64_t timeout_ms, std::int64_t initial_backoff_ms = 20);

  Admission submit_group(const core::SampleGroup& group) override;
  DequeueResult dequeue(core::PolicyVersion current, std::size_t num_groups, std::int64_t timeout_ms) override;
  std::size_t announce_version(core::PolicyVersion current) override;
  BufferStats stats() override;

 private:
  std::string base_url_;
  int timeout_ms_;
  core::JsonHttpClient client_;
};

}  // namespace rollforge::buffer
