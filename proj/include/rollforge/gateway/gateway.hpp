#pragma once

#include <atomic>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "rollforge/core/http_json.hpp"
#include "rollforge/core/tokenizer.hpp"
#include "rollforge/gateway/backend.hpp"
#include "rollforge/gateway/persistence.hpp"

namespace rollforge::gateway {

// Every backend failed for a request.
class GatewayError : public WireError {
 public:
  using WireError::WireError;
};

// A request pinned a version the gateway no longer (or not yet) serves.
class VersionPinError : public ProtocolError {
 public:
  using ProtocolError::ProtocolError;
};

struct InferenceRequest {
  core::TokenSeq prompt;
  std::string traj_id;
  std::int64_t step = 0;
  // Generate with these weights instead of the serving version; allowed while the
  // serving version is at most pin_window ahead.
  std::optional<core::PolicyVersion> pinned_version;
  std::uint64_t sample_seed = 0;
  int max_tokens = 0;  // 0: backend default
};

struct GatewayConfig {
  PersistenceConfig persistence;
  int max_retries = 2;
  std::int64_t retry_backoff_ms = 2;
  std::uint64_t pin_window = 1;
  std::string request_id_prefix = "req";
  // Autoscaling stub thresholds.
  double scale_up_latency_ms = 200.0;
  double scale_down_latency_ms = 20.0;
};

struct ScalingDecision {
  std::size_t current_workers = 0;
  std::size_t desired_workers = 0;
  std::string reason;
};

struct GatewayStats {
  std::uint64_t requests = 0;
  std::uint64_t failures = 0;
  std::uint64_t retries = 0;
  std::uint64_t pin_rejections = 0;
  std::uint64_t teacher_missing = 0;
  std::vector<std::uint64_t> per_backend;
  core::PolicyVersion serving_version;
  PersistenceCounters persistence;
  double mean_latency_ms = 0.0;
};

// Attaches the teacher's per-token log-probabilities of the record's own output.
// On teacher failure the record is returned unchanged apart from teacher_missing.
InferenceRecord attach_teacher(InferenceRecord record, ModelBackend& teacher);

// Unified inference entry. Routes round-robin over identical backends, stamps the
// serving version at admission, and hands records to the persistence buffer without
// waiting on I/O.
class Gateway {
 public:
  Gateway(std::vector<std::shared_ptr<ModelBackend>> backends, std::shared_ptr<RecordSink> sink,
          GatewayConfig config = {}, std::shared_ptr<ModelBackend> teacher = nullptr);

  InferenceRecord infer(const InferenceRequest& request);

  // Must strictly increase; in-flight requests keep their admission version.
  void set_serving_version(core::PolicyVersion v);
  core::PolicyVersion serving_version() const;

  std::size_t flush() { return buffer_.flush(); }
  void crash() { buffer_.crash(); }
  GatewayStats stats() const;
  // Scaling stub: recommends a worker count from recent latency; never acts on it.
  ScalingDecision scaling_decision() const;

  ModelBackend& primary_backend() { return *backends_.front(); }
  bool has_teacher() const noexcept { return teacher_ != nullptr; }

 private:
  GatewayConfig config_;
  std::vector<std::shared_ptr<ModelBackend>> backends_;
  std::shared_ptr<ModelBackend> teacher_;
  PersistenceBuffer buffer_;

  mutable std::mutex admission_mu_;
  core::PolicyVersion serving_;
  std::uint64_t admission_seq_ = 0;

  std::atomic<std::uint64_t> rr_{0};
  mutable std::mutex stats_mu_;
  GatewayStats stats_;
  std::deque<std::int64_t> recent_latency_;
};

// HTTP front for a Gateway:
//   POST /v1/chat/completions {model, messages, prompt_tokens?, max_tokens?, metadata:{traj_id, step, policy_version?, sample_seed?}}
//     -> {id, choices:[{message, tokens, logprobs, dists?, teacher_logprobs?}], metadata:{policy_version, ...}}
//   POST /v1/score {prompt_tokens, output_tokens, policy_version} -> {dists}
//   GET|POST /v1/version, GET /v1/stats
class GatewayServer {
 public:
  explicit GatewayServer(Gateway& gateway, std::shared_ptr<core::Tokenizer> tokenizer = nullptr);
  int start(const std::string& host = "127.0.0.1", int port = 0) { return server_.start(host, port); }
  void stop() { server_.stop(); }
  std::string base_url() const { return server_.base_url(); }

 private:
  Gateway& gateway_;
  std::shared_ptr<core::Tokenizer> tokenizer_;
  core::JsonHttpServer server_;
};

}  // namespace rollforge::gateway
