#include "rollforge/gateway/backend.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <thread>

#include "rollforge/core/hash.hpp"

namespace rollforge::gateway {

using nlohmann::json;

void log_softmax(std::vector<double>& logits) {
  const double top = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double l : logits) sum += std::exp(l - top);
  const double lse = top + std::log(sum);
  for (double& l : logits) l -= lse;
}

MockBackend::MockBackend(MockBackendConfig config) : config_(std::move(config)) {
  if (config_.vocab_size < 2) throw ValidationError("vocab_size", "need at least two tokens");
  if (config_.max_tokens < 1) throw ValidationError("max_tokens", "must be positive");
}

std::uint64_t MockBackend::base_hash(core::PolicyVersion version, const core::TokenSeq& prompt) const {
  core::Fnv1a h;
  h.add(config_.seed).add(config_.fixed_version.value_or(version.value)).add(prompt);
  return h.digest();
}

std::vector<double> MockBackend::distribution(std::uint64_t context_hash) const {
  std::vector<double> logits(static_cast<std::size_t>(config_.vocab_size));
  for (std::size_t k = 0; k < logits.size(); ++k) {
    const double u = core::unit_from_hash(core::splitmix64(context_hash ^ (0x9e3779b97f4a7c15ULL * (k + 1))));
    logits[k] = config_.sharpness * (2.0 * u - 1.0);
  }
  log_softmax(logits);
  return logits;
}

Completion MockBackend::generate(const core::TokenSeq& prompt, core::PolicyVersion version, std::uint64_t sample_seed,
                                 int max_tokens) {
  ++calls_;
  if (config_.latency_ms > 0) std::this_thread::sleep_for(std::chrono::milliseconds(config_.latency_ms));
  const int n = max_tokens > 0 ? max_tokens : config_.max_tokens;
  std::uint64_t ctx = base_hash(version, prompt);
  const std::uint64_t draw_base = core::Fnv1a().add(sample_seed).add(ctx).digest();
  Completion out;
  for (int pos = 0; pos < n; ++pos) {
    auto dist = distribution(ctx);
    const double u = core::unit_from_hash(core::splitmix64(draw_base + static_cast<std::uint64_t>(pos)));
    double acc = 0.0;
    std::size_t pick = dist.size() - 1;
    for (std::size_t k = 0; k < dist.size(); ++k) {
      acc += std::exp(dist[k]);
      if (u < acc) {
        pick = k;
        break;
      }
    }
    out.tokens.push_back(static_cast<core::Token>(pick));
    out.logprobs.push_back(dist[pick]);
    out.dists.push_back(std::move(dist));
    ctx = core::Fnv1a().add(ctx).add(static_cast<std::uint64_t>(pick)).digest();
  }
  return out;
}

core::LogDistSeq MockBackend::score(const core::TokenSeq& prompt, const core::TokenSeq& output,
                                    core::PolicyVersion version) {
  ++calls_;
  std::uint64_t ctx = base_hash(version, prompt);
  core::LogDistSeq dists;
  for (core::Token t : output) {
    dists.push_back(distribution(ctx));
    ctx = core::Fnv1a().add(ctx).add(static_cast<std::uint64_t>(t)).digest();
  }
  return dists;
}

HttpBackend::HttpBackend(const std::string& base_url, int timeout_ms) : client_(base_url, timeout_ms) {}

Completion HttpBackend::generate(const core::TokenSeq& prompt, core::PolicyVersion version, std::uint64_t sample_seed,
                                 int max_tokens) {
  json body = {{"model", "default"},
               {"messages", json::array()},
               {"prompt_tokens", prompt},
               {"metadata", {{"policy_version", version.value}, {"sample_seed", sample_seed}}}};
  if (max_tokens > 0) body["max_tokens"] = max_tokens;
  const json reply = client_.post("/v1/chat/completions", body);
  const json& choice = reply.at("choices").at(0);
  Completion c;
  c.tokens = choice.at("tokens").get<core::TokenSeq>();
  c.logprobs = choice.at("logprobs").get<std::vector<double>>();
  if (choice.contains("dists")) c.dists = choice.at("dists").get<core::LogDistSeq>();
  if (c.logprobs.size() != c.tokens.size()) throw ProtocolError(id() + ": logprobs/tokens length mismatch");
  return c;
}

core::LogDistSeq HttpBackend::score(const core::TokenSeq& prompt, const core::TokenSeq& output,
                                    core::PolicyVersion version) {
  const json reply = client_.post(
      "/v1/score", {{"prompt_tokens", prompt}, {"output_tokens", output}, {"policy_version", version.value}});
  auto dists = reply.at("dists").get<core::LogDistSeq>();
  if (dists.size() != output.size()) throw ProtocolError(id() + ": score length mismatch");
  return dists;
}

}  // namespace rollforge::gateway
