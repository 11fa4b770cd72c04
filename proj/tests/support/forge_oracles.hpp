#pragma once

// Independent re-implementations used as oracles for the sample-forge properties.

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <vector>

#include "rollforge/forge/forge.hpp"
#include "support/generators.hpp"

namespace rollforge::testing {

// Longest common prefix by the obvious loop.
inline std::size_t naive_lcp(const core::TokenSeq& a, const core::TokenSeq& b) {
  std::size_t i = 0;
  for (; i < a.size() && i < b.size(); ++i) {
    if (a[i] != b[i]) break;
  }
  return i;
}

// Trajectory whose step prompts are whole, growing conversation contexts.
inline core::Trajectory random_full_context_trajectory(std::mt19937_64& rng, const TrajectoryShape& shape = {}) {
  auto t = random_trajectory(rng, shape);
  core::TokenSeq context;
  for (auto& s : t.steps) {
    auto fresh = s.prompt_tokens;
    context.insert(context.end(), fresh.begin(), fresh.end());
    s.prompt_tokens = context;
    context.insert(context.end(), s.output_tokens.begin(), s.output_tokens.end());
  }
  return t;
}

// First-fit-decreasing as a list of bins of sample indices.
inline std::vector<std::vector<std::size_t>> ffd_oracle(const std::vector<std::size_t>& lengths, std::size_t cap) {
  std::vector<std::size_t> idx(lengths.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return lengths[a] > lengths[b]; });
  std::vector<std::vector<std::size_t>> bins;
  std::vector<std::size_t> fill;
  for (auto i : idx) {
    bool placed = false;
    for (std::size_t b = 0; b < bins.size() && !placed; ++b) {
      if (fill[b] + lengths[i] <= cap) {
        bins[b].push_back(i);
        fill[b] += lengths[i];
        placed = true;
      }
    }
    if (!placed) {
      bins.push_back({i});
      fill.push_back(lengths[i]);
    }
  }
  return bins;
}

// Counts the failures of the three transformation properties on one random trajectory.
struct TransformFailures {
  std::size_t prefix = 0;
  std::size_t mask = 0;
  std::size_t sentinel = 0;
  std::size_t packing = 0;
};

inline void check_transformations(std::mt19937_64& rng, TransformFailures& f) {
  // Prefix-encoding conservation against a brute-force recount.
  std::vector<core::TokenSeq> turns;
  const auto nturns = 1 + rng() % 6;
  for (std::size_t k = 0; k < nturns; ++k) {
    core::TokenSeq ctx;
    if (!turns.empty() && rng() % 3 != 0) {
      const auto& prev = turns.back();
      ctx.assign(prev.begin(), prev.begin() + static_cast<std::ptrdiff_t>(rng() % (prev.size() + 1)));
    }
    auto extra = random_tokens(rng, 8, 4);
    ctx.insert(ctx.end(), extra.begin(), extra.end());
    turns.push_back(ctx);
  }
  const auto enc = forge::prefix_encode(turns);
  std::size_t fresh = 0, reused = 0, naive = 0;
  for (std::size_t k = 0; k < turns.size(); ++k) {
    const std::size_t expect = k == 0 ? 0 : naive_lcp(turns[k - 1], turns[k]);
    if (enc[k].reused_prefix_len != expect) ++f.prefix;
    core::TokenSeq rebuilt(turns[k].begin(), turns[k].begin() + static_cast<std::ptrdiff_t>(expect));
    rebuilt.insert(rebuilt.end(), enc[k].fresh_tokens.begin(), enc[k].fresh_tokens.end());
    if (rebuilt != turns[k]) ++f.prefix;
    fresh += enc[k].fresh_tokens.size();
    reused += enc[k].reused_prefix_len;
    naive += turns[k].size();
  }
  if (fresh + reused != naive) ++f.prefix;

  // Mask recount and sentinel exclusivity, in both layouts.
  const bool full = rng() % 2 == 0;
  auto traj = full ? random_full_context_trajectory(rng) : random_trajectory(rng);
  forge::PaintOptions opts;
  opts.layout = full ? forge::MaskLayout::full_context : forge::MaskLayout::incremental;
  auto sample = forge::paint_mask(traj, opts);
  std::size_t outputs = 0, masked = 0;
  for (const auto& s : traj.steps) outputs += s.output_tokens.size();
  for (auto m : sample.loss_mask) masked += m;
  if (masked != outputs || sample.loss_mask.size() != sample.tokens.size()) ++f.mask;

  sample.advantage = std::uniform_real_distribution<double>(-2.0, 2.0)(rng);
  const auto base = forge::opd_loss({sample}, 0.3);
  auto poisoned = sample;
  for (std::size_t i = 0; i < poisoned.tokens.size(); ++i) {
    if (!poisoned.loss_mask[i]) {
      poisoned.logprobs_policy[i] = 1e9;
      if (poisoned.logprobs_teacher) (*poisoned.logprobs_teacher)[i] = -1e9;
    }
  }
  const auto after = forge::opd_loss({poisoned}, 0.3);
  if (after.loss != base.loss) ++f.sentinel;

  // Packing bijection: multiset of (token, mask) pairs and exact per-sample round trip.
  std::vector<forge::TrainSample> batch;
  const auto nsamples = 1 + rng() % 8;
  std::size_t longest = 1;
  for (std::size_t i = 0; i < nsamples; ++i) {
    forge::PaintOptions o;
    batch.push_back(forge::paint_mask(random_trajectory(rng), o));
    longest = std::max(longest, batch.back().tokens.size());
  }
  const std::size_t max_len = longest + rng() % 32;
  auto packs = forge::pack(batch, max_len);
  const auto back = forge::unpack(packs);
  std::map<std::pair<core::Token, int>, long> balance;
  for (const auto& s : batch) {
    for (std::size_t i = 0; i < s.tokens.size(); ++i) ++balance[{s.tokens[i], s.loss_mask[i]}];
  }
  for (const auto& s : back) {
    for (std::size_t i = 0; i < s.tokens.size(); ++i) --balance[{s.tokens[i], s.loss_mask[i]}];
  }
  for (const auto& [_, n] : balance) {
    if (n != 0) ++f.packing;
  }
  if (back.size() != batch.size()) {
    ++f.packing;
    return;
  }
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (back[i].tokens != batch[i].tokens || back[i].loss_mask != batch[i].loss_mask ||
        back[i].logprobs_policy != batch[i].logprobs_policy) {
      ++f.packing;
    }
  }
  for (const auto& p : packs) {
    std::size_t used = 0;
    for (const auto& seg : p.segments) used += seg.length;
    if (used + p.padding_len != p.max_len) ++f.packing;
  }
}

// Relative error between the analytic gradient and central differences for one
// random token on a `vocab`-sized toy vocabulary.
inline double gradient_rel_error(std::mt19937_64& rng, std::size_t vocab, double kl_weight) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> logits(vocab);
  for (auto& z : logits) z = n(rng);
  const auto teacher = random_log_dist(rng, vocab);
  const auto token = static_cast<core::Token>(rng() % vocab);
  const double adv = n(rng);
  const double m = 1.0 + static_cast<double>(rng() % 7);
  const auto g = forge::token_loss_grad(logits, token, adv, &teacher, kl_weight, m);
  double worst = 0.0;
  const double h = 1e-5;
  for (std::size_t k = 0; k < vocab; ++k) {
    auto up = logits, down = logits;
    up[k] += h;
    down[k] -= h;
    const double fd = (forge::token_loss(up, token, adv, &teacher, kl_weight, m) -
                       forge::token_loss(down, token, adv, &teacher, kl_weight, m)) /
                      (2.0 * h);
    const double scale = std::max({std::abs(g[k]), std::abs(fd), 1e-3});
    worst = std::max(worst, std::abs(fd - g[k]) / scale);
  }
  return worst;
}

}  // namespace rollforge::testing
