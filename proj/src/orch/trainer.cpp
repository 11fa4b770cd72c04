#include "rollforge/orch/trainer.hpp"

#include <chrono>
#include <thread>

#include "rollforge/core/clock.hpp"
#include "rollforge/forge/forge.hpp"

namespace rollforge::orch {

namespace {

std::int64_t mono_ms() { return static_cast<std::int64_t>(core::steady_ms()); }

constexpr std::int64_t kPollMs = 200;

}  // namespace

SimTrainer::SimTrainer(const RunConfig& config, buffer::BufferApi& buffer, core::JsonlWriter* packs_out)
    : config_(config), buffer_(buffer), packs_out_(packs_out) {
  validate(config_);
}

bool SimTrainer::step(const std::atomic<bool>& stop) {
  std::vector<core::SampleGroup> groups;
  while (groups.empty()) {
    if (stop.load()) return false;
    auto r = buffer_.dequeue(version_, config_.groups_per_batch(), kPollMs);
    groups = std::move(r.groups);
  }
  const std::int64_t start = mono_ms();

  TrainStepRecord rec;
  rec.step = records_.size();
  std::vector<forge::TrainSample> samples;
  forge::PaintOptions paint;
  paint.layout = config_.full_context_layout ? forge::MaskLayout::full_context : forge::MaskLayout::incremental;
  for (const auto& g : groups) {
    std::uint64_t s = 0;
    if (g.policy_version > version_) {
      ++totals_.staleness_violations;
    } else {
      s = core::staleness(g.policy_version, version_);
      if (s > config_.off_by_n) ++totals_.staleness_violations;
    }
    if (!core::is_complete(g)) ++totals_.incomplete_trained;
    rec.staleness.push_back(s);
    rec.group_sizes.push_back(g.trajectories.size());
    totals_.staleness_sum += static_cast<double>(s);
    for (auto& sample : forge::build_group_samples(g, paint)) {
      if (sample.tokens.size() > config_.pack_max_len) {
        ++totals_.oversize_samples;
        continue;
      }
      samples.push_back(std::move(sample));
    }
  }
  totals_.groups_trained += groups.size();

  auto packs = forge::pack(samples, config_.pack_max_len, "s" + std::to_string(rec.step) + "-pack");
  totals_.packs += packs.size();
  if (packs_out_) {
    for (const auto& p : packs) {
      nlohmann::json j = p;
      j["step"] = rec.step;
      j["policy_version"] = version_.value;
      packs_out_->write(j);
    }
  }

  for (int e = 0; e < config_.epochs; ++e) rec.loss = forge::opd_loss(samples, config_.kl_weight).loss;
  totals_.loss_sum += rec.loss;

  const auto remaining = start + config_.train_time_ms - mono_ms();
  if (remaining > 0) std::this_thread::sleep_for(std::chrono::milliseconds(remaining));

  rec.busy = Interval{start, mono_ms()};
  version_ = version_.next();
  buffer_.announce_version(version_);
  records_.push_back(std::move(rec));
  return true;
}

std::size_t SimTrainer::run(std::size_t steps, const std::atomic<bool>& stop) {
  std::size_t done = 0;
  while (done < steps && step(stop)) ++done;
  return done;
}

}  // namespace rollforge::orch
