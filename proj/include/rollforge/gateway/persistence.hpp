#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <unordered_set>
#include <vector>

#include "rollforge/core/jsonl.hpp"
#include "rollforge/core/model.hpp"

namespace rollforge::gateway {

// One model call as seen by the gateway.
struct InferenceRecord {
  std::string request_id;
  std::string traj_id;
  std::int64_t step = 0;
  core::TokenSeq prompt_tokens;
  core::TokenSeq output_tokens;
  std::vector<double> output_logprobs;
  std::optional<core::LogDistSeq> output_dists;
  // Serving version at admission (or the pinned version the request asked for).
  core::PolicyVersion policy_version;
  std::optional<std::vector<double>> teacher_logprobs;
  std::optional<core::LogDistSeq> teacher_dists;
  bool teacher_missing = false;
  std::int64_t latency_ms = 0;
  std::uint64_t admission_seq = 0;
  std::string backend_id;

  bool operator==(const InferenceRecord&) const = default;
};

void to_json(nlohmann::json& j, const InferenceRecord& r);
void from_json(const nlohmann::json& j, InferenceRecord& r);

// Durable destination for records. write() either persists the whole batch or throws.
class RecordSink {
 public:
  virtual ~RecordSink() = default;
  virtual void write(const std::vector<InferenceRecord>& batch) = 0;
};

// Appends records as JSON Lines; request ids already in the file are skipped, so
// repeated flushes of the same record persist it once.
class JsonlRecordSink final : public RecordSink {
 public:
  explicit JsonlRecordSink(std::filesystem::path path);
  void write(const std::vector<InferenceRecord>& batch) override;
  std::size_t persisted() const;
  std::uint64_t duplicates_skipped() const;

 private:
  mutable std::mutex mu_;
  core::JsonlWriter out_;
  std::unordered_set<std::string> seen_;
  std::uint64_t duplicates_ = 0;
};

class PersistenceError : public Error {
 public:
  using Error::Error;
};

struct PersistenceConfig {
  std::size_t capacity = 4096;
  // How long a producer waits on a full buffer before its record is dropped.
  std::int64_t backpressure_timeout_ms = 5000;
  bool auto_flush = true;
  std::int64_t flush_interval_ms = 5;
  std::size_t max_batch = 256;
  int max_retries = 5;
  std::int64_t backoff_initial_ms = 2;
  std::int64_t backoff_max_ms = 200;
};

struct PersistenceCounters {
  std::uint64_t admitted = 0;
  std::uint64_t flushed = 0;
  std::uint64_t dropped = 0;
  std::uint64_t queued = 0;  // includes the batch currently being written
  std::uint64_t saturation_events = 0;
  std::uint64_t write_failures = 0;
};

// Bounded multi-producer queue drained by one background flusher. Invariant:
// flushed + queued + dropped == admitted.
class PersistenceBuffer {
 public:
  PersistenceBuffer(std::shared_ptr<RecordSink> sink, PersistenceConfig config = {});
  ~PersistenceBuffer();
  PersistenceBuffer(const PersistenceBuffer&) = delete;
  PersistenceBuffer& operator=(const PersistenceBuffer&) = delete;

  // Returns without touching the sink while there is room. On a full buffer blocks
  // up to backpressure_timeout_ms, then drops the record and returns false.
  bool enqueue(InferenceRecord record);

  // Writes every record admitted before the call. Retries failed writes with bounded
  // backoff; if the sink keeps failing the records stay queued and PersistenceError is thrown.
  std::size_t flush();

  // Simulated process death: the flusher stops and queued records are lost (counted as dropped).
  void crash();

  PersistenceCounters counters() const;
  const PersistenceConfig& config() const noexcept { return config_; }

 private:
  std::size_t drain_once();
  void flusher_loop();

  std::shared_ptr<RecordSink> sink_;
  PersistenceConfig config_;

  mutable std::mutex mu_;
  std::condition_variable not_full_;
  std::condition_variable has_work_;
  std::deque<InferenceRecord> queue_;
  std::size_t in_flight_ = 0;
  PersistenceCounters counters_;
  bool stopping_ = false;
  bool crashed_ = false;

  std::mutex writer_mu_;
  std::thread flusher_;
};

}  // namespace rollforge::gateway
