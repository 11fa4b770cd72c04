#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "rollforge/buffer/buffer.hpp"
#include "rollforge/core/model.hpp"

namespace rollforge::testing {

inline rollforge::core::SampleGroup make_group(const std::string& id, std::uint64_t version, std::size_t members,
                                               std::size_t expected = 4) {
  rollforge::core::SampleGroup g;
  g.group_id = id;
  g.task_id = "task-" + id;
  g.expected_size = expected;
  g.policy_version = rollforge::core::PolicyVersion{version};
  for (std::size_t i = 0; i < members; ++i) {
    rollforge::core::Trajectory t;
    t.traj_id = id + "/" + std::to_string(i);
    t.task_id = g.task_id;
    t.group_id = id;
    t.env_id = "sim";
    t.policy_version = g.policy_version;
    rollforge::core::Step s;
    s.prompt_tokens = {1, 2};
    s.output_tokens = {static_cast<rollforge::core::Token>(i)};
    s.output_logprobs = {-1.0};
    s.action = "0";
    s.reward = static_cast<double>(i % 2);
    t.steps.push_back(s);
    g.trajectories.push_back(t);
  }
  return g;
}

struct SchedulerOutcome {
  std::size_t returned_groups = 0;
  std::size_t violations = 0;          // staleness > off_by_n at return
  std::size_t atomicity_failures = 0;  // returned group not whole
  std::size_t conservation_failures = 0;
};

// Random interleaving of submits (fresh, stale, partial, mixed), version bumps,
// dequeues and evictions against one buffer; every return is checked against the
// version in force at that moment.
inline SchedulerOutcome run_random_schedule(std::uint64_t seed, std::uint64_t off_by_n, std::size_t ops = 200) {
  using namespace rollforge;
  std::mt19937_64 rng(seed);
  buffer::BufferConfig cfg;
  cfg.group_size = 4;
  cfg.off_by_n = off_by_n;
  cfg.global_batch_size = 8;
  auto side = std::make_shared<buffer::MemorySideStore>();
  buffer::SampleBuffer buf(cfg, side);
  SchedulerOutcome out;
  std::uint64_t current = 0;
  std::size_t next_id = 0;
  for (std::size_t op = 0; op < ops; ++op) {
    const auto kind = rng() % 100;
    if (kind < 45) {
      const std::uint64_t lag = rng() % 4;
      const std::uint64_t v = current >= lag ? current - lag : 0;
      const auto shape = rng() % 10;
      auto g = make_group("g" + std::to_string(next_id++), v, shape == 0 ? 3 : 4);
      if (shape == 1) g.trajectories[2].policy_version = core::PolicyVersion{v + 1};
      buf.submit_group(g);
    } else if (kind < 60) {
      ++current;
      if (rng() % 2) buf.announce_version(core::PolicyVersion{current});
    } else if (kind < 90) {
      const std::size_t want = 1 + rng() % 3;
      auto r = buf.dequeue(core::PolicyVersion{current}, want, 0);
      for (const auto& g : r.groups) {
        ++out.returned_groups;
        if (g.policy_version.value > current || current - g.policy_version.value > off_by_n) ++out.violations;
        bool whole = g.trajectories.size() == cfg.group_size;
        for (const auto& t : g.trajectories) {
          whole = whole && t.group_id == g.group_id && t.policy_version == g.policy_version;
        }
        if (!whole) ++out.atomicity_failures;
      }
    } else {
      buf.evict_stale(core::PolicyVersion{current});
    }
    const auto s = buf.stats();
    if (s.admitted != s.dequeued + s.evicted + s.occupancy) ++out.conservation_failures;
    if (side->entries().size() != s.evicted) ++out.conservation_failures;
  }
  return out;
}

}  // namespace rollforge::testing
