#include "rollforge/ckpt/tree.hpp"

#include <fstream>

#include "rollforge/core/jsonl.hpp"

namespace rollforge::ckpt {

std::string to_string(Trigger trigger) {
  switch (trigger) {
    case Trigger::manual: return "manual";
    case Trigger::decision_branch: return "decision_branch";
    case Trigger::high_risk_op: return "high_risk_op";
    case Trigger::periodic: return "periodic";
  }
  return "manual";
}

Trigger trigger_from_string(const std::string& s) {
  if (s == "manual") return Trigger::manual;
  if (s == "decision_branch") return Trigger::decision_branch;
  if (s == "high_risk_op") return Trigger::high_risk_op;
  if (s == "periodic") return Trigger::periodic;
  throw ValidationError("trigger", "unknown trigger '" + s + "'");
}

void to_json(nlohmann::json& j, const CheckpointNode& n) {
  j = {{"node_id", n.node_id},
       {"parent", n.parent ? nlohmann::json(*n.parent) : nlohmann::json(nullptr)},
       {"episode_id", n.episode_id},
       {"branch_id", n.branch_id},
       {"snapshot_id", n.snapshot_id},
       {"state_hash", n.state_hash},
       {"step_index", n.step_index},
       {"trigger", to_string(n.trigger)},
       {"tokens_to_here", n.tokens_to_here}};
}

void from_json(const nlohmann::json& j, CheckpointNode& n) {
  n.node_id = j.at("node_id").get<std::string>();
  n.parent = j.at("parent").is_null() ? std::nullopt : std::optional(j.at("parent").get<std::string>());
  n.episode_id = j.at("episode_id").get<std::string>();
  n.branch_id = j.value("branch_id", std::string(BranchLedger::kMain));
  n.snapshot_id = j.at("snapshot_id").get<std::string>();
  n.state_hash = j.at("state_hash").get<std::string>();
  n.step_index = j.at("step_index").get<std::int64_t>();
  n.trigger = trigger_from_string(j.at("trigger").get<std::string>());
  n.tokens_to_here = j.at("tokens_to_here").get<std::uint64_t>();
}

BranchLedger::BranchLedger() { open(kMain, 0); }

void BranchLedger::open(const std::string& branch_id, std::uint64_t base_tokens) {
  if (increments_.contains(branch_id)) throw ValidationError("branch_id", "branch '" + branch_id + "' already open");
  increments_[branch_id] = 0;
  bases_[branch_id] = base_tokens;
}

void BranchLedger::charge(const std::string& branch_id, std::uint64_t tokens) {
  auto it = increments_.find(branch_id);
  if (it == increments_.end()) throw ValidationError("branch_id", "unknown branch '" + branch_id + "'");
  it->second += tokens;
}

std::uint64_t BranchLedger::increment(const std::string& branch_id) const {
  auto it = increments_.find(branch_id);
  if (it == increments_.end()) throw ValidationError("branch_id", "unknown branch '" + branch_id + "'");
  return it->second;
}

std::uint64_t BranchLedger::base(const std::string& branch_id) const {
  auto it = bases_.find(branch_id);
  if (it == bases_.end()) throw ValidationError("branch_id", "unknown branch '" + branch_id + "'");
  return it->second;
}

std::uint64_t BranchLedger::total_billed() const {
  std::uint64_t total = 0;
  for (const auto& [_, inc] : increments_) total += inc;
  return total;
}

std::uint64_t BranchLedger::naive_total() const {
  std::uint64_t total = 0;
  for (const auto& [id, inc] : increments_) total += bases_.at(id) + inc;
  return total;
}

VersionTree::VersionTree(std::string episode_id) : episode_id_(std::move(episode_id)) {}

std::optional<CheckpointNode> VersionTree::checkpoint(env::Snapshottable& env, Trigger trigger,
                                                      std::int64_t step_index,
                                                      std::uint64_t tokens_so_far) {
  if (current_ && tokens_so_far < node(*current_).tokens_to_here) {
    throw ValidationError("tokens_so_far", "token count went backwards along the path");
  }
  env::SnapshotInfo info;
  try {
    info = env.snapshot();
  } catch (const std::exception& e) {
    warnings_.push_back("snapshot failed at step " + std::to_string(step_index) + ": " + e.what());
    return std::nullopt;
  }
  CheckpointNode n;
  n.node_id = episode_id_ + "/n" + std::to_string(nodes_.size());
  n.parent = current_;
  n.episode_id = episode_id_;
  n.branch_id = current_branch_;
  n.snapshot_id = info.snapshot_id;
  n.state_hash = info.state_hash;
  n.step_index = step_index;
  n.trigger = trigger;
  n.tokens_to_here = tokens_so_far;
  index_[n.node_id] = nodes_.size();
  nodes_.push_back(n);
  current_ = n.node_id;
  return n;
}

void VersionTree::rollback(const CheckpointNode& target, env::Snapshottable& env) {
  if (target.episode_id != episode_id_ || !index_.contains(target.node_id)) {
    throw OwnershipError("node " + target.node_id + " does not belong to episode " + episode_id_);
  }
  const auto& n = node(target.node_id);
  const std::string observed = env.restore(n.snapshot_id);
  if (observed != n.state_hash) {
    throw IntegrityError("state hash after restoring " + n.node_id + " is " + observed + ", recorded " +
                         n.state_hash);
  }
  current_ = n.node_id;
}

std::string VersionTree::branch(const std::string& node_id) {
  const auto& n = node(node_id);
  std::string id = "b" + std::to_string(next_branch_++);
  ledger_.open(id, n.tokens_to_here);
  current_branch_ = id;
  current_ = n.node_id;
  return id;
}

const CheckpointNode& VersionTree::node(const std::string& node_id) const {
  auto it = index_.find(node_id);
  if (it == index_.end()) throw ValidationError("node_id", "no node '" + node_id + "' in " + episode_id_);
  return nodes_[it->second];
}

std::optional<CheckpointNode> VersionTree::current() const {
  if (!current_) return std::nullopt;
  return node(*current_);
}

void VersionTree::save_jsonl(const std::filesystem::path& path, bool append) const {
  core::JsonlWriter out(path, !append);
  for (const auto& n : nodes_) out.write(n);
  out.flush();
}

VersionTree VersionTree::load_jsonl(const std::filesystem::path& path, const std::string& episode_id) {
  VersionTree tree(episode_id);
  for (const auto& record : core::read_jsonl(path).records) {
    auto n = record.get<CheckpointNode>();
    if (n.episode_id != episode_id) continue;
    if (n.parent && !tree.index_.contains(*n.parent)) {
      throw ValidationError("parent", "node " + n.node_id + " precedes its parent");
    }
    tree.index_[n.node_id] = tree.nodes_.size();
    tree.nodes_.push_back(n);
    tree.current_ = n.node_id;
  }
  return tree;
}

std::optional<Trigger> TriggerPolicy::decide(std::int64_t step_index, const std::string& action) const {
  for (const auto& pattern : high_risk_patterns) {
    if (std::regex_search(action, std::regex(pattern, std::regex::icase))) return Trigger::high_risk_op;
  }
  if (every_n > 0 && step_index % every_n == 0) return Trigger::periodic;
  return std::nullopt;
}

}  // namespace rollforge::ckpt
