#include <doctest.h>

#include <filesystem>
#include <map>
#include <random>
#include <set>

#include "support/ckpt_schedule.hpp"
#include "support/temp.hpp"
#include "rollforge/ckpt/tree.hpp"
#include "rollforge/env/sim_env.hpp"

using namespace rollforge;
using namespace rollforge::ckpt;
using rollforge::env::SimEnv;
using rollforge::env::SimEnvConfig;

namespace {

struct FailingSnapshots final : env::Snapshottable {
  env::SnapshotInfo snapshot() override { throw WireError("snapshot endpoint down"); }
  std::string restore(const std::string&) override { return ""; }
};

// Restores to a state that never matches what was recorded.
struct DriftingEnv final : env::Snapshottable {
  int n = 0;
  env::SnapshotInfo snapshot() override { return {"s" + std::to_string(n), "hash-" + std::to_string(n++)}; }
  std::string restore(const std::string&) override { return "hash-drifted"; }
};

SimEnvConfig risky() {
  SimEnvConfig c;
  c.kind = env::SimKind::risky_ops;
  c.goal_length = 50;
  c.reward = {core::RewardKind::multilevel_discrete, {-1.0, 0.0, 1.0}};
  return c;
}

}  // namespace

TEST_CASE("checkpoint at step 0 is the root") {
  SimEnv env("e", {});
  env.reset("t", 0);
  VersionTree tree("ep");
  auto root = tree.checkpoint(env, Trigger::manual, 0, 12);
  REQUIRE(root);
  CHECK_FALSE(root->parent.has_value());
  CHECK(root->tokens_to_here == 12);
  CHECK(root->state_hash == env.state_hash());
}

TEST_CASE("successive checkpoints chain parent links") {
  SimEnv env("e", {});
  env.reset("t", 0);
  VersionTree tree("ep");
  auto a = tree.checkpoint(env, Trigger::periodic, 3, 30);
  auto b = tree.checkpoint(env, Trigger::periodic, 7, 70);
  CHECK(b->parent == a->node_id);
  CHECK_THROWS_AS(tree.checkpoint(env, Trigger::manual, 8, 69), ValidationError);
}

TEST_CASE("snapshot failure creates no node and leaves a warning") {
  FailingSnapshots env;
  VersionTree tree("ep");
  CHECK_FALSE(tree.checkpoint(env, Trigger::manual, 0, 0).has_value());
  CHECK(tree.list_anchors().empty());
  CHECK(tree.warnings().size() == 1);
}

TEST_CASE("rollback to root equals a fresh reset") {
  SimEnv env("e", risky());
  auto r = env.reset("t", 5);
  VersionTree tree("ep");
  auto root = tree.checkpoint(env, Trigger::manual, 0, 0);
  env.step(r.actions[0]);
  env.step("read notes.md");
  tree.rollback(*root, env);
  SimEnv fresh("f", risky());
  fresh.reset("t", 5);
  CHECK(env.canonical_state() == fresh.canonical_state());
  CHECK(tree.current()->node_id == root->node_id);
}

TEST_CASE("rollback then replay reproduces observations and rewards") {
  SimEnv env("e", risky());
  auto r = env.reset("t", 1);
  VersionTree tree("ep");
  auto node = tree.checkpoint(env, Trigger::manual, 0, 0);
  const std::vector<std::string> actions{r.actions[0], "read notes.md", "write scratch.txt"};
  std::vector<env::StepResult> first;
  for (const auto& a : actions) first.push_back(env.step(a));
  tree.rollback(*node, env);
  for (std::size_t i = 0; i < actions.size(); ++i) {
    auto again = env.step(actions[i]);
    CHECK(again.observation == first[i].observation);
    CHECK(again.reward == first[i].reward);
  }
}

TEST_CASE("rollback across episodes and on drift") {
  SimEnv env("e", {});
  env.reset("t", 0);
  VersionTree a("ep-a"), b("ep-b");
  auto node = a.checkpoint(env, Trigger::manual, 0, 0);
  CHECK_THROWS_AS(b.rollback(*node, env), OwnershipError);

  DriftingEnv drift;
  VersionTree c("ep-c");
  auto n = c.checkpoint(drift, Trigger::manual, 0, 0);
  CHECK_THROWS_AS(c.rollback(*n, drift), IntegrityError);
}

TEST_CASE("branch ledger bills shared prefixes once") {
  SimEnv env("e", {});
  env.reset("t", 0);
  VersionTree tree("ep");
  tree.charge(100);
  auto fork = tree.checkpoint(env, Trigger::decision_branch, 4, 100);
  auto b1 = tree.branch(fork->node_id);
  tree.charge(20);
  auto b2 = tree.branch(fork->node_id);
  tree.charge(30);
  CHECK(tree.ledger().increment(b1) == 20);
  CHECK(tree.ledger().increment(b2) == 30);
  CHECK(tree.ledger().total_billed() == 150);
  // Restarting each branch from scratch: 100 + 120 + 130.
  CHECK(tree.ledger().naive_total() == 350);

  auto b3 = tree.branch(fork->node_id);
  CHECK(tree.ledger().increment(b3) == 0);
}

TEST_CASE("K branches share the fork tokens once") {
  SimEnv env("e", {});
  env.reset("t", 0);
  VersionTree tree("ep");
  tree.charge(64);
  auto fork = tree.checkpoint(env, Trigger::decision_branch, 2, 64);
  std::uint64_t sum = 0;
  for (std::uint64_t k = 1; k <= 6; ++k) {
    tree.branch(fork->node_id);
    tree.charge(k * 7);
    sum += k * 7;
  }
  CHECK(tree.ledger().total_billed() == 64 + sum);
  CHECK(tree.ledger().increments().size() == 7);
}

TEST_CASE("list_anchors is topological") {
  VersionTree empty("ep0");
  CHECK(empty.list_anchors().empty());

  SimEnv env("e", {});
  env.reset("t", 0);
  VersionTree tree("ep");
  auto root = tree.checkpoint(env, Trigger::manual, 0, 0);
  auto left = tree.checkpoint(env, Trigger::periodic, 5, 10);
  tree.rollback(*root, env);
  tree.branch(root->node_id);
  auto right = tree.checkpoint(env, Trigger::high_risk_op, 1, 3);
  auto anchors = tree.list_anchors();
  REQUIRE(anchors.size() == 3);
  std::map<std::string, std::size_t> pos;
  for (std::size_t i = 0; i < anchors.size(); ++i) pos[anchors[i].node_id] = i;
  CHECK(pos[root->node_id] < pos[left->node_id]);
  CHECK(pos[root->node_id] < pos[right->node_id]);
  CHECK(anchors[2].trigger == Trigger::high_risk_op);
}

TEST_CASE("trigger policy") {
  TriggerPolicy p;
  CHECK(p.decide(3, "delete config.yml") == Trigger::high_risk_op);
  CHECK(p.decide(3, "Overwrite notes.md") == Trigger::high_risk_op);
  CHECK(p.decide(10, "read notes.md") == Trigger::periodic);
  CHECK_FALSE(p.decide(3, "read deleted.txt").has_value());
}

TEST_CASE("tree persists as JSON Lines") {
  const auto path = rollforge::testing::temp_path("tree.jsonl");
  std::filesystem::remove(path);
  SimEnv env("e", {});
  env.reset("t", 0);
  VersionTree tree("ep");
  auto root = tree.checkpoint(env, Trigger::manual, 0, 0);
  tree.checkpoint(env, Trigger::periodic, 5, 9);
  tree.rollback(*root, env);
  tree.branch(root->node_id);
  tree.checkpoint(env, Trigger::high_risk_op, 1, 2);
  tree.save_jsonl(path);
  VersionTree("other").save_jsonl(path);
  auto back = VersionTree::load_jsonl(path, "ep");
  CHECK(back.list_anchors() == tree.list_anchors());
  std::filesystem::remove(path);
}

// Random exploration plans: each step is a trie edge; the unique-path cost is the
// token sum over distinct trie nodes, computed without the ledger.
TEST_CASE("property: random schedules keep tree shape, fidelity and unique-path billing") {
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    CAPTURE(seed);
    const auto out = rollforge::testing::run_checkpoint_schedule(20240611 + seed);
    CHECK(out.checkpoints + out.restores > 0);
    CHECK(out.hash_mismatches == 0);
    CHECK(out.billing_mismatch == 0);
    CHECK(out.shape_failures == 0);
  }
}
