#include "rollforge/gateway/gateway.hpp"

#include <chrono>
#include <numeric>
#include <thread>

#include "rollforge/core/clock.hpp"

namespace rollforge::gateway {

using nlohmann::json;

InferenceRecord attach_teacher(InferenceRecord record, ModelBackend& teacher) {
  try {
    auto dists = teacher.score(record.prompt_tokens, record.output_tokens, record.policy_version);
    if (dists.size() != record.output_tokens.size()) throw ProtocolError("teacher returned wrong length");
    std::vector<double> lp;
    lp.reserve(dists.size());
    for (std::size_t i = 0; i < dists.size(); ++i) {
      lp.push_back(dists[i].at(static_cast<std::size_t>(record.output_tokens[i])));
    }
    record.teacher_logprobs = std::move(lp);
    record.teacher_dists = std::move(dists);
    record.teacher_missing = false;
  } catch (const std::exception&) {
    record.teacher_logprobs.reset();
    record.teacher_dists.reset();
    record.teacher_missing = true;
  }
  return record;
}

Gateway::Gateway(std::vector<std::shared_ptr<ModelBackend>> backends, std::shared_ptr<RecordSink> sink,
                 GatewayConfig config, std::shared_ptr<ModelBackend> teacher)
    : config_(std::move(config)),
      backends_(std::move(backends)),
      teacher_(std::move(teacher)),
      buffer_(std::move(sink), config_.persistence) {
  if (backends_.empty()) throw ValidationError("backends", "at least one model backend is required");
  stats_.per_backend.assign(backends_.size(), 0);
}

InferenceRecord Gateway::infer(const InferenceRequest& request) {
  const auto t0 = core::steady_ms();
  InferenceRecord rec;
  {
    std::lock_guard lock(admission_mu_);
    rec.admission_seq = ++admission_seq_;
    rec.policy_version = serving_;
    if (request.pinned_version) {
      const auto pin = *request.pinned_version;
      if (pin > serving_ || serving_.value - pin.value > config_.pin_window) {
        std::lock_guard s(stats_mu_);
        ++stats_.pin_rejections;
        throw VersionPinError("pinned version " + std::to_string(pin.value) + " outside serving window at " +
                              std::to_string(serving_.value));
      }
      rec.policy_version = pin;
    }
  }
  rec.request_id = config_.request_id_prefix + "-" + std::to_string(rec.admission_seq);
  rec.traj_id = request.traj_id;
  rec.step = request.step;
  rec.prompt_tokens = request.prompt;

  std::optional<Completion> completion;
  std::string last_error;
  std::uint64_t retries = 0;
  const int attempts = config_.max_retries + 1;
  for (int attempt = 0; attempt < attempts && !completion; ++attempt) {
    const std::size_t idx = rr_.fetch_add(1) % backends_.size();
    try {
      completion = backends_[idx]->generate(request.prompt, rec.policy_version, request.sample_seed, request.max_tokens);
      rec.backend_id = backends_[idx]->id();
      std::lock_guard s(stats_mu_);
      ++stats_.per_backend[idx];
    } catch (const std::exception& e) {
      last_error = e.what();
      if (attempt + 1 < attempts) {
        ++retries;
        std::this_thread::sleep_for(std::chrono::milliseconds(config_.retry_backoff_ms));
      }
    }
  }
  {
    std::lock_guard s(stats_mu_);
    ++stats_.requests;
    stats_.retries += retries;
    if (!completion) ++stats_.failures;
  }
  if (!completion) throw GatewayError("all model backends failed: " + last_error);

  rec.output_tokens = std::move(completion->tokens);
  rec.output_logprobs = std::move(completion->logprobs);
  if (!completion->dists.empty()) rec.output_dists = std::move(completion->dists);
  if (teacher_) {
    rec = attach_teacher(std::move(rec), *teacher_);
    if (rec.teacher_missing) {
      std::lock_guard s(stats_mu_);
      ++stats_.teacher_missing;
    }
  }
  rec.latency_ms = core::steady_ms() - t0;
  {
    std::lock_guard s(stats_mu_);
    recent_latency_.push_back(rec.latency_ms);
    if (recent_latency_.size() > 256) recent_latency_.pop_front();
  }
  buffer_.enqueue(rec);
  return rec;
}

void Gateway::set_serving_version(core::PolicyVersion v) {
  std::lock_guard lock(admission_mu_);
  if (v <= serving_) {
    throw OrderingError("serving version must increase: " + std::to_string(serving_.value) + " -> " +
                        std::to_string(v.value));
  }
  serving_ = v;
}

core::PolicyVersion Gateway::serving_version() const {
  std::lock_guard lock(admission_mu_);
  return serving_;
}

GatewayStats Gateway::stats() const {
  GatewayStats out;
  {
    std::lock_guard s(stats_mu_);
    out = stats_;
    if (!recent_latency_.empty()) {
      out.mean_latency_ms = std::accumulate(recent_latency_.begin(), recent_latency_.end(), 0.0) /
                            static_cast<double>(recent_latency_.size());
    }
  }
  out.serving_version = serving_version();
  out.persistence = buffer_.counters();
  return out;
}

ScalingDecision Gateway::scaling_decision() const {
  const auto s = stats();
  ScalingDecision d;
  d.current_workers = backends_.size();
  d.desired_workers = d.current_workers;
  if (s.mean_latency_ms > config_.scale_up_latency_ms) {
    d.desired_workers = d.current_workers + 1;
    d.reason = "mean latency above scale-up threshold";
  } else if (s.mean_latency_ms < config_.scale_down_latency_ms && d.current_workers > 1 && s.requests > 0) {
    d.desired_workers = d.current_workers - 1;
    d.reason = "mean latency below scale-down threshold";
  } else {
    d.reason = "within band";
  }
  return d;
}

GatewayServer::GatewayServer(Gateway& gateway, std::shared_ptr<core::Tokenizer> tokenizer)
    : gateway_(gateway), tokenizer_(tokenizer ? std::move(tokenizer) : std::make_shared<core::ByteTokenizer>()) {
  server_.post("/v1/chat/completions", [this](const json& body, const auto&) {
    InferenceRequest req;
    if (body.contains("prompt_tokens")) {
      req.prompt = body["prompt_tokens"].get<core::TokenSeq>();
    } else {
      std::string text;
      for (const auto& m : body.at("messages")) {
        text += m.value("role", std::string("user")) + ": " + m.at("content").get<std::string>() + "\n";
      }
      req.prompt = tokenizer_->encode(text);
    }
    const json meta = body.value("metadata", json::object());
    req.traj_id = meta.value("traj_id", std::string{});
    req.step = meta.value("step", std::int64_t{0});
    req.sample_seed = meta.value("sample_seed", std::uint64_t{0});
    if (meta.contains("policy_version")) req.pinned_version = core::PolicyVersion{meta["policy_version"].get<std::uint64_t>()};
    req.max_tokens = body.value("max_tokens", 0);
    const auto rec = gateway_.infer(req);
    std::string content;
    for (std::size_t i = 0; i < rec.output_tokens.size(); ++i) {
      content += (i ? " " : "") + std::to_string(rec.output_tokens[i]);
    }
    json choice = {{"index", 0},
                   {"message", {{"role", "assistant"}, {"content", content}}},
                   {"tokens", rec.output_tokens},
                   {"logprobs", rec.output_logprobs},
                   {"finish_reason", "length"}};
    if (rec.output_dists) choice["dists"] = *rec.output_dists;
    if (rec.teacher_logprobs) choice["teacher_logprobs"] = *rec.teacher_logprobs;
    return json{{"id", rec.request_id},
                {"object", "chat.completion"},
                {"model", body.value("model", std::string("default"))},
                {"choices", json::array({choice})},
                {"metadata",
                 {{"policy_version", rec.policy_version.value},
                  {"traj_id", rec.traj_id},
                  {"step", rec.step},
                  {"teacher_missing", rec.teacher_missing}}}};
  });
  server_.post("/v1/score", [this](const json& body, const auto&) {
    auto dists = gateway_.primary_backend().score(body.at("prompt_tokens").get<core::TokenSeq>(),
                                                  body.at("output_tokens").get<core::TokenSeq>(),
                                                  core::PolicyVersion{body.value("policy_version", std::uint64_t{0})});
    return json{{"dists", dists}};
  });
  server_.get("/v1/version", [this](const json&, const auto&) {
    return json{{"policy_version", gateway_.serving_version().value}};
  });
  server_.post("/v1/version", [this](const json& body, const auto&) {
    gateway_.set_serving_version(core::PolicyVersion{body.at("policy_version").get<std::uint64_t>()});
    return json{{"ok", true}, {"policy_version", gateway_.serving_version().value}};
  });
  server_.get("/v1/stats", [this](const json&, const auto&) {
    const auto s = gateway_.stats();
    return json{{"requests", s.requests},
                {"failures", s.failures},
                {"retries", s.retries},
                {"pin_rejections", s.pin_rejections},
                {"teacher_missing", s.teacher_missing},
                {"per_backend", s.per_backend},
                {"serving_version", s.serving_version.value},
                {"mean_latency_ms", s.mean_latency_ms},
                {"persistence",
                 {{"admitted", s.persistence.admitted},
                  {"flushed", s.persistence.flushed},
                  {"dropped", s.persistence.dropped},
                  {"queued", s.persistence.queued},
                  {"saturation_events", s.persistence.saturation_events},
                  {"write_failures", s.persistence.write_failures}}}};
  });
}

}  // namespace rollforge::gateway
