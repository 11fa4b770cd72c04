#include "rollforge/gateway/persistence.hpp"

#include <algorithm>
#include <chrono>

namespace rollforge::gateway {

using nlohmann::json;

void to_json(json& j, const InferenceRecord& r) {
  j = {{"request_id", r.request_id},
       {"traj_id", r.traj_id},
       {"step", r.step},
       {"prompt_tokens", r.prompt_tokens},
       {"output_tokens", r.output_tokens},
       {"output_logprobs", r.output_logprobs},
       {"policy_version", r.policy_version.value},
       {"teacher_missing", r.teacher_missing},
       {"latency_ms", r.latency_ms},
       {"admission_seq", r.admission_seq},
       {"backend_id", r.backend_id}};
  if (r.output_dists) j["output_dists"] = *r.output_dists;
  if (r.teacher_logprobs) j["teacher_logprobs"] = *r.teacher_logprobs;
  if (r.teacher_dists) j["teacher_dists"] = *r.teacher_dists;
}

void from_json(const json& j, InferenceRecord& r) {
  r.request_id = j.at("request_id").get<std::string>();
  r.traj_id = j.at("traj_id").get<std::string>();
  r.step = j.at("step").get<std::int64_t>();
  r.prompt_tokens = j.at("prompt_tokens").get<core::TokenSeq>();
  r.output_tokens = j.at("output_tokens").get<core::TokenSeq>();
  r.output_logprobs = j.at("output_logprobs").get<std::vector<double>>();
  r.policy_version = core::PolicyVersion{j.at("policy_version").get<std::uint64_t>()};
  r.teacher_missing = j.value("teacher_missing", false);
  r.latency_ms = j.value("latency_ms", std::int64_t{0});
  r.admission_seq = j.value("admission_seq", std::uint64_t{0});
  r.backend_id = j.value("backend_id", std::string{});
  r.output_dists = j.contains("output_dists") ? std::optional(j["output_dists"].get<core::LogDistSeq>()) : std::nullopt;
  r.teacher_logprobs =
      j.contains("teacher_logprobs") ? std::optional(j["teacher_logprobs"].get<std::vector<double>>()) : std::nullopt;
  r.teacher_dists = j.contains("teacher_dists") ? std::optional(j["teacher_dists"].get<core::LogDistSeq>()) : std::nullopt;
}

JsonlRecordSink::JsonlRecordSink(std::filesystem::path path) : out_(path) {
  for (const auto& rec : core::read_jsonl(path).records) {
    if (rec.contains("request_id")) seen_.insert(rec["request_id"].get<std::string>());
  }
}

void JsonlRecordSink::write(const std::vector<InferenceRecord>& batch) {
  std::lock_guard lock(mu_);
  for (const auto& r : batch) {
    if (!seen_.insert(r.request_id).second) {
      ++duplicates_;
      continue;
    }
    out_.write(r);
  }
  out_.flush();
}

std::size_t JsonlRecordSink::persisted() const {
  std::lock_guard lock(mu_);
  return seen_.size();
}

std::uint64_t JsonlRecordSink::duplicates_skipped() const {
  std::lock_guard lock(mu_);
  return duplicates_;
}

PersistenceBuffer::PersistenceBuffer(std::shared_ptr<RecordSink> sink, PersistenceConfig config)
    : sink_(std::move(sink)), config_(config) {
  if (!sink_) throw ValidationError("sink", "a record sink is required");
  if (config_.capacity == 0) throw ValidationError("capacity", "must be positive");
  if (config_.max_batch == 0) config_.max_batch = config_.capacity;
  if (config_.auto_flush) flusher_ = std::thread([this] { flusher_loop(); });
}

PersistenceBuffer::~PersistenceBuffer() {
  {
    std::lock_guard lock(mu_);
    stopping_ = true;
  }
  has_work_.notify_all();
  if (flusher_.joinable()) flusher_.join();
  bool crashed;
  {
    std::lock_guard lock(mu_);
    crashed = crashed_;
  }
  if (!crashed) {
    try {
      flush();
    } catch (const std::exception&) {
      // Nothing left to report to; counters already show the records as queued.
    }
  }
}

bool PersistenceBuffer::enqueue(InferenceRecord record) {
  std::unique_lock lock(mu_);
  ++counters_.admitted;
  auto has_room = [&] { return crashed_ || queue_.size() + in_flight_ < config_.capacity; };
  if (!has_room()) {
    ++counters_.saturation_events;
    if (!not_full_.wait_for(lock, std::chrono::milliseconds(config_.backpressure_timeout_ms), has_room)) {
      ++counters_.dropped;
      return false;
    }
  }
  if (crashed_) {
    ++counters_.dropped;
    return false;
  }
  queue_.push_back(std::move(record));
  lock.unlock();
  has_work_.notify_one();
  return true;
}

std::size_t PersistenceBuffer::drain_once() {
  std::lock_guard writer(writer_mu_);
  std::vector<InferenceRecord> batch;
  {
    std::lock_guard lock(mu_);
    if (crashed_) return 0;
    const std::size_t n = std::min(queue_.size(), config_.max_batch);
    batch.assign(std::make_move_iterator(queue_.begin()), std::make_move_iterator(queue_.begin() + static_cast<std::ptrdiff_t>(n)));
    queue_.erase(queue_.begin(), queue_.begin() + static_cast<std::ptrdiff_t>(n));
    in_flight_ = n;
  }
  if (batch.empty()) return 0;
  try {
    sink_->write(batch);
  } catch (...) {
    std::lock_guard lock(mu_);
    ++counters_.write_failures;
    in_flight_ = 0;
    if (!crashed_) queue_.insert(queue_.begin(), std::make_move_iterator(batch.begin()), std::make_move_iterator(batch.end()));
    throw;
  }
  {
    std::lock_guard lock(mu_);
    in_flight_ = 0;
    if (!crashed_) counters_.flushed += batch.size();
  }
  not_full_.notify_all();
  return batch.size();
}

std::size_t PersistenceBuffer::flush() {
  std::uint64_t target;
  {
    std::lock_guard lock(mu_);
    target = counters_.admitted;
  }
  std::size_t written = 0;
  int failures = 0;
  std::int64_t backoff = config_.backoff_initial_ms;
  for (;;) {
    {
      std::lock_guard lock(mu_);
      if (crashed_ || counters_.flushed + counters_.dropped >= target || (queue_.empty() && in_flight_ == 0)) break;
    }
    try {
      const std::size_t n = drain_once();
      written += n;
      failures = 0;
      backoff = config_.backoff_initial_ms;
      if (n == 0) {
        // Another flusher holds the in-flight batch; wait for it to land.
        std::this_thread::sleep_for(std::chrono::milliseconds(1));
      }
    } catch (const std::exception& e) {
      if (++failures > config_.max_retries) {
        throw PersistenceError(std::string("persistence sink keeps failing: ") + e.what());
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(backoff));
      backoff = std::min(backoff * 2, config_.backoff_max_ms);
    }
  }
  return written;
}

void PersistenceBuffer::crash() {
  {
    std::lock_guard lock(mu_);
    stopping_ = true;
  }
  has_work_.notify_all();
  if (flusher_.joinable()) flusher_.join();
  {
    std::lock_guard lock(mu_);
    crashed_ = true;
    counters_.dropped += queue_.size() + in_flight_;
    queue_.clear();
    in_flight_ = 0;
  }
  not_full_.notify_all();
}

PersistenceCounters PersistenceBuffer::counters() const {
  std::lock_guard lock(mu_);
  PersistenceCounters c = counters_;
  c.queued = queue_.size() + in_flight_;
  return c;
}

void PersistenceBuffer::flusher_loop() {
  std::int64_t backoff = config_.backoff_initial_ms;
  for (;;) {
    {
      std::unique_lock lock(mu_);
      has_work_.wait_for(lock, std::chrono::milliseconds(config_.flush_interval_ms),
                         [&] { return stopping_ || !queue_.empty(); });
      if (stopping_) return;
      if (queue_.empty()) continue;
    }
    try {
      drain_once();
      backoff = config_.backoff_initial_ms;
    } catch (const std::exception&) {
      std::this_thread::sleep_for(std::chrono::milliseconds(backoff));
      backoff = std::min(backoff * 2, config_.backoff_max_ms);
    }
  }
}

}  // namespace rollforge::gateway
