#pragma once

// Random checkpoint / step / rollback / branch schedules on the risky-ops sim env,
// checked against a trie of unique paths built alongside.

#include <map>
#include <random>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "rollforge/ckpt/tree.hpp"
#include "rollforge/env/sim_env.hpp"

namespace rollforge::testing {

inline env::SimEnvConfig risky_sim() {
  env::SimEnvConfig c;
  c.kind = env::SimKind::risky_ops;
  c.goal_length = 50;
  c.reward = {core::RewardKind::multilevel_discrete, {-1.0, 0.0, 1.0}};
  return c;
}

struct ScheduleOutcome {
  std::size_t checkpoints = 0;
  std::size_t restores = 0;
  std::size_t hash_mismatches = 0;  // after checkpoint or restore
  std::size_t billing_mismatch = 0; // 1 when billed tokens differ from the unique-path sum
  std::size_t shape_failures = 0;   // parent order, edge count, monotone tokens
};

inline ScheduleOutcome run_checkpoint_schedule(std::uint64_t seed, int ops = 40) {
  std::mt19937_64 rng(seed);
  ScheduleOutcome out;
  env::SimEnv env("e", risky_sim());
  auto reset = env.reset("task", seed);
  ckpt::VersionTree tree("ep" + std::to_string(seed));

  struct TrieNode {
    std::map<std::string, std::size_t> children;
    std::uint64_t tokens = 0;
  };
  std::vector<TrieNode> trie(1);
  std::size_t at = 0;
  std::uint64_t path_tokens = 0;
  std::map<std::string, std::pair<std::size_t, std::uint64_t>> node_pos;  // node -> (trie pos, tokens)
  std::vector<std::string> offered = reset.actions;
  int label = 0;

  auto root = tree.checkpoint(env, ckpt::Trigger::manual, 0, 0);
  if (!root) {
    ++out.shape_failures;
    return out;
  }
  node_pos[root->node_id] = {at, 0};
  for (int op = 0; op < ops; ++op) {
    const int kind = static_cast<int>(rng() % 10);
    if (kind < 6) {
      // Every fresh step is a new edge: labels never repeat.
      std::string action = offered.empty() ? "read notes.md" : offered[rng() % offered.size()];
      if (action.starts_with("delete") || action.starts_with("overwrite")) action = "read notes.md";
      auto r = env.step(action);
      if (r.done) break;
      offered = r.actions;
      const std::uint64_t tokens = 1 + rng() % 50;
      trie.push_back({{}, tokens});
      trie[at].children[std::to_string(label++)] = trie.size() - 1;
      at = trie.size() - 1;
      path_tokens += tokens;
      tree.charge(tokens);
    } else if (kind < 8) {
      auto n = tree.checkpoint(env, ckpt::Trigger::periodic, op, path_tokens);
      if (!n) {
        ++out.shape_failures;
        continue;
      }
      ++out.checkpoints;
      if (n->state_hash != env.state_hash()) ++out.hash_mismatches;
      node_pos[n->node_id] = {at, path_tokens};
    } else {
      auto anchors = tree.list_anchors();
      const auto& target = anchors[rng() % anchors.size()];
      tree.rollback(target, env);
      ++out.restores;
      if (env.state_hash() != target.state_hash) ++out.hash_mismatches;
      tree.branch(target.node_id);
      std::tie(at, path_tokens) = node_pos[target.node_id];
      offered = {"read notes.md", "write scratch.txt"};
    }
  }

  std::uint64_t unique = 0;
  for (const auto& n : trie) unique += n.tokens;
  if (tree.ledger().total_billed() != unique) out.billing_mismatch = 1;

  const auto anchors = tree.list_anchors();
  std::size_t edges = 0;
  std::set<std::string> seen;
  for (const auto& n : anchors) {
    if (n.parent) {
      ++edges;
      if (!seen.contains(*n.parent)) ++out.shape_failures;
      if (tree.node(*n.parent).tokens_to_here > n.tokens_to_here) ++out.shape_failures;
    }
    seen.insert(n.node_id);
  }
  if (edges + 1 != anchors.size()) ++out.shape_failures;
  return out;
}

}  // namespace rollforge::testing
