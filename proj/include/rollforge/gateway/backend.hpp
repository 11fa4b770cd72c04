#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rollforge/core/http_json.hpp"
#include "rollforge/core/model.hpp"

namespace rollforge::gateway {

struct Completion {
  core::TokenSeq tokens;
  std::vector<double> logprobs;  // of the sampled tokens
  core::LogDistSeq dists;        // full distribution at each position; may be empty
};

// A model that can generate and score. `version` selects the weights.
class ModelBackend {
 public:
  virtual ~ModelBackend() = default;
  virtual Completion generate(const core::TokenSeq& prompt, core::PolicyVersion version, std::uint64_t sample_seed,
                              int max_tokens) = 0;
  // Log-distribution at every position of `output` given `prompt`.
  virtual core::LogDistSeq score(const core::TokenSeq& prompt, const core::TokenSeq& output,
                                 core::PolicyVersion version) = 0;
  virtual std::string id() const = 0;
};

struct MockBackendConfig {
  std::string id = "mock";
  std::uint64_t seed = 0;
  int vocab_size = 8;
  int max_tokens = 4;
  // Scale of the pseudo-logits; larger means peakier distributions.
  double sharpness = 2.0;
  // Ignore the requested version (a frozen teacher).
  std::optional<std::uint64_t> fixed_version;
  std::int64_t latency_ms = 0;
};

// Deterministic stand-in model: the distribution at each position is a pure function
// of (seed, version, prompt, tokens so far); sampling additionally depends on sample_seed.
class MockBackend final : public ModelBackend {
 public:
  explicit MockBackend(MockBackendConfig config = {});

  Completion generate(const core::TokenSeq& prompt, core::PolicyVersion version, std::uint64_t sample_seed,
                      int max_tokens) override;
  core::LogDistSeq score(const core::TokenSeq& prompt, const core::TokenSeq& output,
                         core::PolicyVersion version) override;
  std::string id() const override { return config_.id; }
  std::uint64_t calls() const noexcept { return calls_.load(); }
  const MockBackendConfig& config() const noexcept { return config_; }

 private:
  std::vector<double> distribution(std::uint64_t context_hash) const;
  std::uint64_t base_hash(core::PolicyVersion version, const core::TokenSeq& prompt) const;

  MockBackendConfig config_;
  std::atomic<std::uint64_t> calls_{0};
};

// Remote model speaking the chat-completions shape used by GatewayServer:
//   POST /v1/chat/completions {prompt_tokens, max_tokens, metadata:{policy_version, sample_seed}}
//   POST /v1/score {prompt_tokens, output_tokens, policy_version} -> {dists}
class HttpBackend final : public ModelBackend {
 public:
  explicit HttpBackend(const std::string& base_url, int timeout_ms = 5000);

  Completion generate(const core::TokenSeq& prompt, core::PolicyVersion version, std::uint64_t sample_seed,
                      int max_tokens) override;
  core::LogDistSeq score(const core::TokenSeq& prompt, const core::TokenSeq& output,
                         core::PolicyVersion version) override;
  std::string id() const override { return "http:" + client_.url().str(); }

 private:
  core::JsonHttpClient client_;
};

// In-place log-softmax.
void log_softmax(std::vector<double>& logits);

}  // namespace rollforge::gateway
