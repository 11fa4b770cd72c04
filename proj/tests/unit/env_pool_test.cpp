#include <doctest.h>

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <regex>
#include <set>
#include <thread>

#include "support/temp.hpp"
#include "rollforge/core/observation_store.hpp"
#include "rollforge/env/config.hpp"
#include "rollforge/env/pool.hpp"
#include "rollforge/env/sim_env.hpp"

using namespace rollforge;
using namespace rollforge::env;
using namespace std::chrono_literals;

namespace {

EnvFactory sim_factory(SimEnvConfig cfg = {}, std::set<std::size_t> refuse = {}) {
  return [cfg, refuse](std::size_t ordinal) {
    SimEnvConfig c = cfg;
    c.fail_on_start = refuse.contains(ordinal);
    return std::make_unique<SimEnv>("sim-" + std::to_string(ordinal), c);
  };
}

PoolConfig pool_config(std::size_t size, std::size_t batch = 2) {
  PoolConfig c;
  c.pool_size = size;
  c.warmup_batch = std::min(size, batch);
  c.lease_timeout_ms = 2000;
  return c;
}

template <typename Pred>
bool eventually(Pred pred, std::chrono::milliseconds limit = 2000ms) {
  const auto deadline = std::chrono::steady_clock::now() + limit;
  while (std::chrono::steady_clock::now() < deadline) {
    if (pred()) return true;
    std::this_thread::sleep_for(2ms);
  }
  return pred();
}

// Independent reading of the counting env's observation: "count from S by D | seq: a b c".
long long expected_next(const std::string& obs) {
  std::smatch m;
  REQUIRE(std::regex_search(obs, m, std::regex(R"(count from (-?\d+) by (\d+) \| seq:((?: -?\d+)+))")));
  const long long stride = std::stoll(m[2]);
  std::string seq = m[3];
  const long long last = std::stoll(seq.substr(seq.find_last_of(' ') + 1));
  return last + stride;
}

}  // namespace

TEST_CASE("prewarm: all instances start") {
  EnvPool pool(pool_config(4), sim_factory());
  auto status = pool.prewarm();
  CHECK(status.state == core::JobState::success);
  CHECK(pool.stats().ready == 4);
}

TEST_CASE("prewarm: one refused endpoint gives partial_success") {
  auto cfg = pool_config(4);
  cfg.replenish = false;
  EnvPool pool(cfg, sim_factory({}, {2}));
  auto status = pool.prewarm();
  CHECK(status.state == core::JobState::partial_success);
  REQUIRE(status.errors.size() == 1);
  CHECK(status.errors[0].item_id == "env-2");
  CHECK(pool.stats().ready == 3);
}

TEST_CASE("prewarm: nothing starts gives error status with causes") {
  auto cfg = pool_config(2);
  cfg.replenish = false;
  EnvPool pool(cfg, sim_factory({}, {0, 1}));
  auto status = pool.prewarm();
  CHECK(status.state == core::JobState::error);
  CHECK(status.errors.size() == 2);
}

TEST_CASE("pool config validation") {
  CHECK_THROWS_AS(EnvPool(pool_config(0), sim_factory()), ValidationError);
  auto cfg = pool_config(2);
  cfg.warmup_batch = 3;
  CHECK_THROWS_AS(EnvPool(cfg, sim_factory()), ValidationError);
}

TEST_CASE("lease transitions a ready handle to leased") {
  EnvPool pool(pool_config(1), sim_factory());
  pool.prewarm();
  auto h = pool.lease("task-A");
  CHECK(h.state == EnvState::leased);
  CHECK(h.current_task == "task-A");
  CHECK(pool.stats().ready == 0);
  CHECK(pool.stats().leased == 1);
}

TEST_CASE("two concurrent leases on one handle: second blocks until release") {
  EnvPool pool(pool_config(1), sim_factory());
  pool.prewarm();
  auto first = pool.lease("a");
  std::atomic<bool> second_done{false};
  std::thread t([&] {
    auto h = pool.lease("b");
    second_done = true;
    pool.release(h);
  });
  CHECK(eventually([&] { return pool.stats().waiting == 1; }));
  std::this_thread::sleep_for(30ms);
  CHECK_FALSE(second_done.load());
  pool.release(first);
  t.join();
  CHECK(second_done.load());
  CHECK(pool.stats().leases_granted == 2);
}

TEST_CASE("empty pool lease times out with occupancy statistics") {
  auto cfg = pool_config(1);
  cfg.replenish = false;
  EnvPool pool(cfg, sim_factory({}, {0}));
  pool.prewarm();
  const auto t0 = std::chrono::steady_clock::now();
  try {
    (void)pool.lease("x", 10);
    FAIL("expected pool exhaustion");
  } catch (const PoolExhausted& e) {
    CHECK(std::chrono::steady_clock::now() - t0 >= 10ms);
    CHECK(e.stats().ready == 0);
    CHECK(e.stats().pool_size == 1);
  }
}

TEST_CASE("reset returns the task's initial observation and is deterministic") {
  auto store = std::make_shared<core::ObservationStore>();
  EnvPool pool(pool_config(1), [store](std::size_t i) {
    return std::make_unique<SimEnv>("sim-" + std::to_string(i), SimEnvConfig{}, store);
  });
  pool.prewarm();
  LeasedEnv env(pool, "task-A");
  auto r1 = env.reset("task-A", 3);
  CHECK(r1.observation.find("task=task-A") != std::string::npos);
  CHECK(store->get(r1.observation_ref) == r1.observation);
  env.step(r1.actions.at(0));
  auto r2 = env.reset("task-A", 3);
  CHECK(r2.observation_ref == r1.observation_ref);
  CHECK(r2.actions == r1.actions);
}

TEST_CASE("two resets of the same task produce byte-identical state") {
  SimEnv a("a", {}), b("b", {});
  a.reset("task-A", 1);
  b.reset("task-B", 1);
  b.reset("task-A", 1);
  CHECK(a.canonical_state() == b.canonical_state());
}

TEST_CASE("counting env follows its transition table") {
  SimEnvConfig cfg;
  cfg.goal_length = 3;
  SimEnv env("e", cfg);
  auto r = env.reset("task-C", 5);
  std::string obs = r.observation;
  // Wrong answer: no reward, no progress.
  const long long next = expected_next(obs);
  auto wrong = env.step(std::to_string(next + 1));
  CHECK(wrong.reward == 0.0);
  CHECK_FALSE(wrong.done);
  CHECK(expected_next(wrong.observation) == next);
  obs = wrong.observation;
  for (int i = 0; i < 3; ++i) {
    auto s = env.step(std::to_string(expected_next(obs)));
    CHECK(s.reward == 1.0);
    CHECK(s.done == (i == 2));
    obs = s.observation;
  }
  CHECK_THROWS_AS(env.step("1"), ProtocolError);
}

TEST_CASE("terminal_binary pays only at the final step") {
  SimEnvConfig cfg;
  cfg.goal_length = 3;
  cfg.reward.kind = core::RewardKind::terminal_binary;
  SimEnv env("e", cfg);
  std::string obs = env.reset("t", 0).observation;
  std::vector<double> rewards;
  for (int i = 0; i < 3; ++i) {
    auto s = env.step(std::to_string(expected_next(obs)));
    rewards.push_back(s.reward);
    obs = s.observation;
  }
  CHECK(rewards == std::vector<double>{0.0, 0.0, 1.0});
}

TEST_CASE("risky-ops env uses multi-level rewards and ends on destroyed protected files") {
  SimEnvConfig cfg;
  cfg.kind = SimKind::risky_ops;
  cfg.goal_length = 2;
  cfg.reward = {core::RewardKind::multilevel_discrete, {-1.0, 0.0, 1.0}};
  SimEnv env("e", cfg);
  env.reset("t", 0);
  CHECK(env.step("read notes.md").reward == 0.0);
  CHECK(env.step("write out0.txt").reward == 0.0);
  auto done = env.step("write out1.txt");
  CHECK(done.reward == 1.0);
  CHECK(done.done);
  env.reset("t", 0);
  auto bad = env.step("delete config.yml");
  CHECK(bad.reward == -1.0);
  CHECK(bad.done);
}

TEST_CASE("rejected action ends the episode with an embedded error") {
  SimEnv env("e", {});
  env.reset("t", 0);
  auto r = env.step("not-a-number");
  CHECK(r.done);
  REQUIRE(r.error.has_value());
  CHECK(r.reward == 0.0);
}

TEST_CASE("wire error kills the handle; later calls are stale") {
  SimEnvConfig cfg;
  cfg.failure_rate = 1.0;
  auto pcfg = pool_config(1);
  pcfg.replenish = false;
  EnvPool pool(pcfg, sim_factory(cfg));
  pool.prewarm();
  auto h = pool.lease("t");
  auto r = pool.reset(h, "t", 0);
  CHECK_THROWS_AS(pool.step(h, r.actions.at(0)), WireError);
  CHECK_THROWS_AS(pool.reset(h, "t", 0), StaleLease);
}

TEST_CASE("dead handles are replaced asynchronously") {
  SimEnvConfig cfg;
  cfg.failure_rate = 1.0;
  EnvPool pool(pool_config(2), sim_factory(cfg));
  pool.prewarm();
  auto h = pool.lease("t");
  auto r = pool.reset(h, "t", 0);
  CHECK_THROWS_AS(pool.step(h, r.actions.at(0)), WireError);
  CHECK(eventually([&] { return pool.stats().ready == 2; }));
  CHECK(pool.stats().replacements_spawned >= 1);
}

TEST_CASE("lease then release restores the ready count") {
  EnvPool pool(pool_config(3), sim_factory());
  pool.prewarm();
  const auto before = pool.stats().ready;
  auto h = pool.lease("t");
  pool.release(h);
  CHECK(eventually([&] { return pool.stats().ready == before; }));
}

TEST_CASE("close on a ready handle dips then recovers pool size") {
  EnvPool pool(pool_config(3), sim_factory());
  pool.prewarm();
  auto victim = pool.handles().front();
  pool.close(victim);
  CHECK(pool.stats().ready <= 3);
  CHECK(eventually([&] { return pool.stats().ready == 3; }));
  for (const auto& h : pool.handles()) CHECK(h.env_id != victim.env_id);
}

TEST_CASE("release of an unleased handle is a counted no-op") {
  EnvPool pool(pool_config(2), sim_factory());
  pool.prewarm();
  auto h = pool.lease("t");
  pool.release(h);
  pool.release(h);
  CHECK(pool.stats().double_release_warnings == 1);
  pool.release(pool.handles().back());
  CHECK(pool.stats().double_release_warnings == 2);
}

TEST_CASE("waiters are served FIFO") {
  EnvPool pool(pool_config(1), sim_factory());
  pool.prewarm();
  auto held = pool.lease("holder");
  std::mutex mu;
  std::vector<int> order;
  std::vector<std::thread> threads;
  for (int i = 0; i < 4; ++i) {
    threads.emplace_back([&, i] {
      auto h = pool.lease("w" + std::to_string(i));
      {
        std::lock_guard lock(mu);
        order.push_back(i);
      }
      pool.release(h);
    });
    REQUIRE(eventually([&] { return pool.stats().waiting == static_cast<std::size_t>(i + 1); }));
  }
  pool.release(held);
  for (auto& t : threads) t.join();
  CHECK(order == std::vector<int>{0, 1, 2, 3});
}

TEST_CASE("property: no double lease and conservation under 100 concurrent workers") {
  EnvPool pool(pool_config(5), sim_factory());
  pool.prewarm();
  std::mutex ledger_mu;
  std::map<std::string, int> active;
  std::atomic<int> violations{0};
  std::atomic<int> completed{0};
  std::vector<std::thread> workers;
  for (int w = 0; w < 100; ++w) {
    workers.emplace_back([&, w] {
      for (int k = 0; k < 3; ++k) {
        auto h = pool.lease("task-" + std::to_string(w));
        {
          std::lock_guard lock(ledger_mu);
          if (++active[h.env_id] > 1) ++violations;
        }
        auto r = pool.reset(h, "task-" + std::to_string(w), static_cast<std::uint64_t>(k));
        pool.step(h, r.actions.at(0));
        auto s = pool.stats();
        if (s.ready + s.leased > 5) ++violations;
        {
          std::lock_guard lock(ledger_mu);
          --active[h.env_id];
        }
        pool.release(h);
      }
      ++completed;
    });
  }
  for (auto& t : workers) t.join();
  CHECK(violations == 0);
  // Hot-switch liveness: every queued task eventually got a lease.
  CHECK(completed == 100);
  CHECK(pool.stats().leases_granted == 300);
}

TEST_CASE("env config loading") {
  const auto dir = rollforge::testing::temp_path("env_cfg");
  std::filesystem::create_directories(dir);
  {
    std::ofstream(dir / "a.yaml") << "kind: risky_ops\ntasks: [t1, t2]\nreward_schema: {kind: multilevel_discrete, levels: [-1, 0, 1]}\nseed: 9\n";
    std::ofstream(dir / "b.yaml") << "kind: counting\ntasks: [t3]\n";
  }
  auto a = load_env_config(dir / "a.yaml");
  CHECK(a.kind == SimKind::risky_ops);
  CHECK(a.reward.levels.size() == 3);
  CHECK(a.seed == 9);
  auto merged = load_env_root(dir);
  CHECK(merged.tasks == std::vector<std::string>{"t1", "t2", "t3"});
  std::ofstream(dir / "c.yml") << "kind: counting\ntasks: []\n";
  CHECK_THROWS_AS(load_env_root(dir), ConfigError);
  std::filesystem::remove_all(dir);
}
