#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include <json.hpp>

#include "rollforge/core/errors.hpp"
#include "rollforge/env/environment.hpp"

namespace rollforge::ckpt {

enum class Trigger { manual, decision_branch, high_risk_op, periodic };

std::string to_string(Trigger trigger);
Trigger trigger_from_string(const std::string& s);

struct CheckpointNode {
  std::string node_id;
  std::optional<std::string> parent;
  std::string episode_id;
  std::string branch_id;  // branch that was active when the node was taken
  std::string snapshot_id;
  std::string state_hash;
  std::int64_t step_index = 0;
  Trigger trigger = Trigger::manual;
  std::uint64_t tokens_to_here = 0;

  bool operator==(const CheckpointNode&) const = default;
};

void to_json(nlohmann::json& j, const CheckpointNode& n);
void from_json(const nlohmann::json& j, CheckpointNode& n);

// Restored state does not hash to the recorded value.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

// Node belongs to another episode's tree.
class OwnershipError : public Error {
 public:
  using Error::Error;
};

// Tokens billed per branch. The main branch starts at zero; a forked branch
// records the fork point's cumulative tokens as its base and bills only what it
// spends after the fork.
class BranchLedger {
 public:
  static constexpr const char* kMain = "main";

  BranchLedger();

  void open(const std::string& branch_id, std::uint64_t base_tokens);
  void charge(const std::string& branch_id, std::uint64_t tokens);

  std::uint64_t increment(const std::string& branch_id) const;
  std::uint64_t base(const std::string& branch_id) const;
  // Sum of every branch's increment: shared prefixes counted once.
  std::uint64_t total_billed() const;
  // What restarting every branch from scratch would have cost.
  std::uint64_t naive_total() const;
  const std::map<std::string, std::uint64_t>& increments() const noexcept { return increments_; }

 private:
  std::map<std::string, std::uint64_t> increments_;
  std::map<std::string, std::uint64_t> bases_;
};

// Git-like tree of snapshots for one episode. Single writer; nodes are immutable
// once created.
class VersionTree {
 public:
  explicit VersionTree(std::string episode_id);

  // Snapshots `env` and appends a child of the current node. A failed snapshot
  // creates nothing and records a warning.
  std::optional<CheckpointNode> checkpoint(env::Snapshottable& env, Trigger trigger,
                                           std::int64_t step_index, std::uint64_t tokens_so_far);

  // Restores `node` and verifies the state hash; the current node moves to it.
  void rollback(const CheckpointNode& node, env::Snapshottable& env);

  // Opens a new branch forked at `node_id` and makes it current.
  std::string branch(const std::string& node_id);

  // Bills tokens to the current branch.
  void charge(std::uint64_t tokens) { ledger_.charge(current_branch_, tokens); }

  // Parent-before-child order.
  std::vector<CheckpointNode> list_anchors() const { return nodes_; }
  const CheckpointNode& node(const std::string& node_id) const;
  std::optional<CheckpointNode> current() const;
  const std::string& current_branch() const noexcept { return current_branch_; }
  const std::string& episode_id() const noexcept { return episode_id_; }
  const BranchLedger& ledger() const noexcept { return ledger_; }
  const std::vector<std::string>& warnings() const noexcept { return warnings_; }

  void save_jsonl(const std::filesystem::path& path, bool append = true) const;
  // Rebuilds a tree from persisted nodes of `episode_id`; ledger state is not persisted.
  static VersionTree load_jsonl(const std::filesystem::path& path, const std::string& episode_id);

 private:
  std::string episode_id_;
  std::vector<CheckpointNode> nodes_;
  std::map<std::string, std::size_t> index_;
  std::optional<std::string> current_;
  std::string current_branch_ = BranchLedger::kMain;
  std::size_t next_branch_ = 1;
  BranchLedger ledger_;
  std::vector<std::string> warnings_;
};

// Decides when a rollout worker takes automatic checkpoints: before any action
// matching a high-risk pattern, and every `every_n` steps.
struct TriggerPolicy {
  std::vector<std::string> high_risk_patterns{R"(^\s*(delete|rm|overwrite|truncate|drop)\b)"};
  int every_n = 5;

  std::optional<Trigger> decide(std::int64_t step_index, const std::string& action) const;
};

}  // namespace rollforge::ckpt
