#pragma once

// Random value generators shared by property-style tests.

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "rollforge/core/model.hpp"

namespace rollforge::testing {

inline std::vector<double> random_log_dist(std::mt19937_64& rng, std::size_t vocab) {
  std::normal_distribution<double> n(0.0, 1.5);
  std::vector<double> logits(vocab);
  for (auto& x : logits) x = n(rng);
  double m = logits[0];
  for (double x : logits) m = std::max(m, x);
  double z = 0.0;
  for (double x : logits) z += std::exp(x - m);
  const double lse = m + std::log(z);
  for (auto& x : logits) x -= lse;
  return logits;
}

inline core::TokenSeq random_tokens(std::mt19937_64& rng, std::size_t max_len, int vocab = 64) {
  std::uniform_int_distribution<std::size_t> len(0, max_len);
  std::uniform_int_distribution<int> tok(0, vocab - 1);
  core::TokenSeq out(len(rng));
  for (auto& t : out) t = tok(rng);
  return out;
}

struct TrajectoryShape {
  std::size_t max_steps = 6;
  std::size_t max_prompt = 8;
  std::size_t max_output = 6;
  bool with_teacher = true;
  bool with_dists = true;
  std::size_t vocab = 5;
};

inline core::Trajectory random_trajectory(std::mt19937_64& rng, const TrajectoryShape& shape = {}) {
  std::uniform_int_distribution<std::size_t> nsteps(0, shape.max_steps);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  core::Trajectory t;
  t.traj_id = "traj-" + std::to_string(rng());
  t.task_id = "task-" + std::to_string(rng() % 7);
  t.env_id = "env-" + std::to_string(rng() % 3);
  t.group_id = "group-" + std::to_string(rng() % 5);
  t.policy_version = core::PolicyVersion{rng() % 1000};
  t.terminal_reward = unit(rng) < 0.5 ? 0.0 : 1.0;
  t.status = static_cast<core::TrajectoryStatus>(rng() % 3);
  t.created_at = 1700000000000LL + static_cast<std::int64_t>(rng() % 1000000);
  const std::size_t n = nsteps(rng);
  for (std::size_t i = 0; i < n; ++i) {
    core::Step s;
    s.index = static_cast<std::int64_t>(i);
    s.observation_ref = "sha256:" + std::to_string(rng());
    s.prompt_tokens = random_tokens(rng, shape.max_prompt, static_cast<int>(shape.vocab));
    s.output_tokens = random_tokens(rng, shape.max_output, static_cast<int>(shape.vocab));
    core::LogDistSeq dists, tdists;
    for (auto tok : s.output_tokens) {
      auto d = random_log_dist(rng, shape.vocab);
      auto td = random_log_dist(rng, shape.vocab);
      s.output_logprobs.push_back(d[tok]);
      dists.push_back(std::move(d));
      tdists.push_back(std::move(td));
    }
    if (shape.with_teacher) {
      std::vector<double> tl;
      for (std::size_t k = 0; k < s.output_tokens.size(); ++k) tl.push_back(tdists[k][s.output_tokens[k]]);
      s.teacher_logprobs = tl;
    }
    if (shape.with_dists) {
      s.output_dists = dists;
      if (shape.with_teacher) s.teacher_dists = tdists;
    }
    s.action = "act-" + std::to_string(rng() % 11);
    s.reward = unit(rng) < 0.5 ? 0.0 : 1.0;
    s.wall_time_ms = static_cast<std::int64_t>(rng() % 5000);
    t.steps.push_back(std::move(s));
  }
  return t;
}

}  // namespace rollforge::testing
