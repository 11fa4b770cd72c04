#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <random>
#include <thread>

#include "rollforge/core/errors.hpp"
#include "rollforge/core/http_json.hpp"
#include "rollforge/core/jsonl.hpp"
#include "rollforge/orch/config.hpp"
#include "rollforge/orch/metrics.hpp"
#include "rollforge/orch/run.hpp"
#include "support/orch_fixtures.hpp"
#include "support/temp.hpp"

using namespace rollforge;
using namespace rollforge::orch;
using rollforge::testing::small_run;
using rollforge::testing::temp_path;

namespace {

std::filesystem::path write_file(const std::string& name, const std::string& text) {
  const auto p = temp_path(name);
  std::filesystem::create_directories(p.parent_path());
  std::ofstream(p) << text;
  return p;
}

int free_port() {
  core::JsonHttpServer probe;
  const int port = probe.start("127.0.0.1", 0);
  probe.stop();
  return port;
}

StepWindowMetrics window(std::size_t step, std::int64_t start, std::int64_t end, std::size_t traj,
                         double busy, std::size_t workers) {
  StepWindowMetrics w;
  w.step = step;
  w.start_ms = start;
  w.end_ms = end;
  w.trajectories_generated = traj;
  w.rollout_busy_ms = busy;
  w.rollout_idle_ms = static_cast<double>(workers) * static_cast<double>(end - start) - busy;
  return w;
}

std::filesystem::path fake_run(const std::string& id, const std::string& mode,
                               const std::vector<StepWindowMetrics>& windows, const std::string& extra_line = "") {
  const auto dir = temp_path("fake_runs") / id;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  {
    core::JsonlWriter out(dir / "metrics.jsonl", true);
    for (const auto& w : windows) out.write(nlohmann::json(w));
    if (!extra_line.empty()) out.write_line(extra_line);
  }
  RunSummary s;
  s.run_id = id;
  s.mode = mode;
  std::ofstream(dir / "report.json") << nlohmann::json{{"summary", s}}.dump(2);
  return dir;
}

}  // namespace

TEST_CASE("dotenv parsing handles comments, quotes and export") {
  const auto vars = parse_dotenv(
      "# comment\n"
      "export RL_GROUP_SIZE=8\n"
      "AIEVOBOX_ENV_CONFIG=\"/tmp/env one.yaml\"\n"
      "BUFFER_SERVER_PORT=19999 # trailing\n"
      "\n"
      "EMPTY=\n");
  CHECK(vars.at("RL_GROUP_SIZE") == "8");
  CHECK(vars.at("AIEVOBOX_ENV_CONFIG") == "/tmp/env one.yaml");
  CHECK(vars.at("BUFFER_SERVER_PORT") == "19999");
  CHECK(vars.at("EMPTY").empty());
  CHECK_THROWS_AS(parse_dotenv("NOT A PAIR\n"), ConfigError);
}

TEST_CASE("dotenv never overrides variables already set") {
  ::setenv("ROLLFORGE_TEST_KEEP", "outer", 1);
  ::unsetenv("ROLLFORGE_TEST_NEW");
  const auto p = write_file("test.env", "ROLLFORGE_TEST_KEEP=inner\nROLLFORGE_TEST_NEW=fresh\n");
  CHECK(load_dotenv(p) == 1);
  CHECK(std::string(std::getenv("ROLLFORGE_TEST_KEEP")) == "outer");
  CHECK(std::string(std::getenv("ROLLFORGE_TEST_NEW")) == "fresh");
  CHECK(load_dotenv(temp_path("missing.env")) == 0);
}

TEST_CASE("environment selection requires exactly one source") {
  ::unsetenv("AIEVOBOX_ENV_CONFIG");
  ::unsetenv("AIEVOBOX_ENV_ROOT");
  const auto cfg = write_file("envsel/one.yaml", "kind: counting\ntasks: [a, b]\n");
  const auto root = cfg.parent_path();

  CHECK_THROWS_AS(resolve_env(std::nullopt, std::nullopt), ConfigError);
  CHECK_THROWS_AS(resolve_env(cfg, root), ConfigError);

  std::string source;
  auto e = resolve_env(cfg, std::nullopt, &source);
  CHECK(e.tasks == std::vector<std::string>{"a", "b"});
  CHECK(source.rfind("config:", 0) == 0);

  ::setenv("AIEVOBOX_ENV_ROOT", root.c_str(), 1);
  e = resolve_env(std::nullopt, std::nullopt, &source);
  CHECK(source.rfind("root:", 0) == 0);
  ::setenv("AIEVOBOX_ENV_CONFIG", cfg.c_str(), 1);
  CHECK_THROWS_AS(resolve_env(std::nullopt, std::nullopt), ConfigError);
  ::unsetenv("AIEVOBOX_ENV_CONFIG");
  ::unsetenv("AIEVOBOX_ENV_ROOT");
}

TEST_CASE("environment variables override run settings") {
  ::setenv("RL_GROUP_SIZE", "8", 1);
  ::setenv("LLM_PROXY_PORT", "19890", 1);
  auto c = apply_env(RunConfig{});
  CHECK(c.group_size == 8);
  CHECK(c.gateway_port == 19890);
  ::unsetenv("RL_GROUP_SIZE");
  ::unsetenv("LLM_PROXY_PORT");
}

TEST_CASE("run config survives a YAML round trip") {
  auto c = small_run(Mode::sync, "roundtrip");
  c.kl_weight = 0.25;
  c.teacher_seed = 9;
  c.checkpoints = true;
  const auto back = run_config_from_yaml(to_yaml(c));
  CHECK(back.mode == Mode::sync);
  CHECK(back.pool_size == c.pool_size);
  CHECK(back.group_size == c.group_size);
  CHECK(back.global_batch_size == c.global_batch_size);
  CHECK(back.total_steps == c.total_steps);
  CHECK(back.rollout_time_ms == c.rollout_time_ms);
  CHECK(back.train_time_ms == c.train_time_ms);
  CHECK(back.kl_weight == doctest::Approx(0.25));
  CHECK(back.teacher_seed == std::optional<std::uint64_t>(9));
  CHECK(back.checkpoints);
  CHECK(back.env.tasks == c.env.tasks);
  CHECK(back.run_id == c.run_id);

  auto bad = c;
  bad.global_batch_size = 5;
  CHECK_THROWS_AS(validate(bad), ConfigError);
}

TEST_CASE("step windows match a millisecond-grid oracle") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    WindowInputs in;
    in.run_start_ms = 1000;
    in.rollout_workers = 1 + rng() % 6;
    std::int64_t t = in.run_start_ms;
    const int steps = 1 + static_cast<int>(rng() % 5);
    for (int k = 0; k < steps; ++k) {
      const std::int64_t start = t + static_cast<std::int64_t>(rng() % 30);
      const std::int64_t end = start + 1 + static_cast<std::int64_t>(rng() % 40);
      in.train.push_back(TrainStepRecord{static_cast<std::size_t>(k), Interval{start, end}, {0, 1}, {2, 2}, 0.5});
      in.bumps.push_back(end);
      t = end;
    }
    for (int i = 0; i < 40; ++i) {
      const std::int64_t s = in.run_start_ms + static_cast<std::int64_t>(rng() % (t - in.run_start_ms + 20));
      const std::int64_t e = s + static_cast<std::int64_t>(rng() % 25);
      in.rollout_busy.push_back(Interval{s, e});
      in.trajectory_done_ms.push_back(e);
    }
    const auto got = compute_windows(in);
    const auto want = rollforge::testing::grid_windows(in);
    REQUIRE(got.size() == want.size());
    for (std::size_t k = 0; k < got.size(); ++k) {
      CHECK(got[k].start_ms == want[k].start_ms);
      CHECK(got[k].end_ms == want[k].end_ms);
      CHECK(got[k].rollout_busy_ms == doctest::Approx(want[k].rollout_busy_ms));
      CHECK(got[k].rollout_idle_ms == doctest::Approx(want[k].rollout_idle_ms));
      CHECK(got[k].train_busy_ms == doctest::Approx(want[k].train_busy_ms));
      CHECK(got[k].train_busy_ms + got[k].train_idle_ms == doctest::Approx(got[k].wall_ms()));
      CHECK(got[k].trajectories_generated == want[k].trajectories_generated);
      CHECK(got[k].batches_trained == 1);
      CHECK(got[k].staleness_histogram.at(1) == 1);
    }
  }
}

TEST_CASE("report pairs a sync and an async run in a ratio table") {
  // sync: 10 and 14 trajectories over two 100 ms windows; async: 30 and 26.
  const auto sync = fake_run("pair-sync", "sync", {window(0, 0, 100, 10, 200, 4), window(1, 100, 200, 14, 280, 4)});
  const auto async = fake_run("pair-async", "async", {window(0, 0, 100, 30, 400, 4), window(1, 100, 200, 26, 380, 4)});
  const std::vector<RunRecord> runs{load_run(async), load_run(sync)};
  const auto j = render_json(runs);
  REQUIRE(j.contains("ratios"));
  REQUIRE(j["ratios"].size() == 1);
  CHECK(j["ratios"][0]["baseline"] == "pair-sync");
  CHECK(j["ratios"][0]["trajectories_per_window_ratio"].get<double>() == doctest::Approx(28.0 / 12.0));
  CHECK(j["ratios"][0]["trajectories_per_second_ratio"].get<double>() == doctest::Approx(280.0 / 120.0));
  const auto md = render_markdown(runs);
  CHECK(md.find("Ratios against pair-sync") != std::string::npos);
  CHECK(md.find("| 2.33 |") != std::string::npos);
  CHECK(md.find("| Staleness |") == std::string::npos);
}

TEST_CASE("single-run report omits ratios; corrupt lines are skipped and flagged") {
  const auto dir = fake_run("lonely", "async", {window(0, 0, 50, 5, 100, 2)}, "{\"step\": 1, truncated");
  const auto rec = load_run(dir);
  CHECK(rec.windows.size() == 1);
  CHECK(rec.skipped_lines == 1);
  const auto md = render_markdown({rec});
  CHECK(md.find("Ratios") == std::string::npos);
  CHECK(md.find("1 corrupted metrics line(s) skipped") != std::string::npos);
  CHECK_FALSE(render_json({rec}).contains("ratios"));

  std::filesystem::remove(dir / "report.json");
  const auto partial = load_run(dir);
  CHECK_FALSE(partial.summary.has_value());
  REQUIRE(partial.gaps.size() == 1);
  CHECK(render_markdown({partial}).find("gap: report.json missing") != std::string::npos);
}

TEST_CASE("zero steps yields an empty report and a clean shutdown") {
  auto c = small_run(Mode::async, "zero-steps");
  c.total_steps = 0;
  const auto r = run(c);
  CHECK(r.windows.empty());
  CHECK(r.summary.trajectories == 0);
  CHECK(r.summary.groups_trained == 0);
  for (const char* f : {"config.yaml", "metrics.jsonl", "report.json", "report.md", "trajectories.jsonl"}) {
    CHECK_MESSAGE(std::filesystem::exists(r.dir / f), f);
  }
  const auto rec = load_run(r.dir);
  CHECK(rec.summary.has_value());
  CHECK(rec.gaps.empty());
}

TEST_CASE("unreachable environments fail at startup before any work") {
  auto c = small_run(Mode::sync, "unreachable");
  c.env.endpoints = {"http://127.0.0.1:1"};
  std::filesystem::remove_all(c.runs_root / c.run_id);
  CHECK_THROWS_AS(run(c), ConfigError);
  CHECK_FALSE(std::filesystem::exists(c.runs_root / c.run_id));
}

TEST_CASE("both modes train only complete, fresh groups under injected failures") {
  for (auto mode : {Mode::sync, Mode::async}) {
    CAPTURE(to_string(mode));
    auto c = small_run(mode, "failures-" + to_string(mode));
    c.env = rollforge::testing::counting_env(0.15);
    c.total_steps = 8;
    const auto r = run(c);
    const auto& s = r.summary;
    CHECK(s.steps == 8);
    CHECK(s.groups_trained == 8 * c.groups_per_batch());
    CHECK(s.staleness_violations == 0);
    CHECK(s.incomplete_trained == 0);
    CHECK(s.trajectory_failures > 0);
    CHECK(s.groups_submitted + s.groups_abandoned >= s.groups_trained);
    for (const auto& w : r.windows) {
      for (const auto& [st, n] : w.staleness_histogram) CHECK(st <= c.off_by_n);
      CHECK(w.rollout_busy_ms + w.rollout_idle_ms == doctest::Approx(c.pool_size * w.wall_ms()));
    }
    // Every trained group came through the buffer's guard, so the trainer's own
    // re-check in train_steps.jsonl must agree.
    for (const auto& rec : core::read_jsonl(r.dir / "train_steps.jsonl").records) {
      for (auto size : rec["group_sizes"]) CHECK(size.get<std::size_t>() == c.group_size);
    }
  }
}

TEST_CASE("sync runs with a fixed seed generate the same trajectories") {
  auto a = small_run(Mode::sync, "determinism-a");
  auto b = small_run(Mode::sync, "determinism-b");
  const auto ra = run(a);
  const auto rb = run(b);
  const auto ta = rollforge::testing::token_multiset(ra.dir / "trajectories.jsonl");
  const auto tb = rollforge::testing::token_multiset(rb.dir / "trajectories.jsonl");
  CHECK(ta.size() >= a.total_steps * a.global_batch_size);
  CHECK(ta == tb);
  CHECK(ra.summary.mean_loss == doctest::Approx(rb.summary.mean_loss));
}

TEST_CASE("async generates at least as many trajectories per second as sync") {
  // Timing noise on a shared machine is a few percent; 5% slack absorbs it.
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 3; ++trial) {
    auto sync = small_run(Mode::sync, "dominance-sync-" + std::to_string(trial));
    sync.rollout_time_ms = 2 + static_cast<std::int64_t>(rng() % 8);
    sync.train_time_ms = 5 + static_cast<std::int64_t>(rng() % 40);
    sync.total_steps = 6;
    auto async = sync;
    async.mode = Mode::async;
    async.run_id = "dominance-async-" + std::to_string(trial);
    const auto rs = run(sync);
    const auto ra = run(async);
    const double tps_sync = static_cast<double>(rs.summary.trajectories) / static_cast<double>(rs.summary.wall_ms);
    const double tps_async = static_cast<double>(ra.summary.trajectories) / static_cast<double>(ra.summary.wall_ms);
    CAPTURE(sync.rollout_time_ms);
    CAPTURE(sync.train_time_ms);
    CHECK(tps_async >= 0.95 * tps_sync);
  }
}

TEST_CASE("checkpointed rollouts anchor and roll back on rejected actions") {
  auto c = small_run(Mode::async, "checkpoints");
  c.env.kind = env::SimKind::risky_ops;
  c.env.tasks = {"ops-a", "ops-b"};
  c.checkpoints = true;
  c.max_env_steps = 8;
  const auto r = run(c);
  CHECK(r.summary.checkpoints > 0);
  CHECK(core::read_jsonl(r.dir / "checkpoints.jsonl").records.size() == r.summary.checkpoints);
  CHECK(r.summary.staleness_violations == 0);
}

TEST_CASE("buffer server and trainer handshake across a late start") {
  auto c = small_run(Mode::async, "dual");
  c.buffer_port = free_port();
  c.gateway_port = 0;
  c.total_steps = 4;
  const std::string url = "http://127.0.0.1:" + std::to_string(c.buffer_port);

  std::atomic<bool> stop{false};
  RunResult trained;
  std::string trainer_error;
  // Trainer first: it must retry until the buffer server comes up.
  std::thread trainer([&] {
    try {
      auto tc = c;
      tc.run_id = "dual-trainer";
      trained = run_trainer(tc, url, stop, 5000);
    } catch (const std::exception& e) {
      trainer_error = e.what();
    }
  });
  std::this_thread::sleep_for(std::chrono::milliseconds(300));
  std::atomic<int> bound{0};
  const auto served = serve_buffer(c, stop, [&](int port, int) { bound = port; });
  trainer.join();

  CHECK(trainer_error.empty());
  CHECK(bound.load() == c.buffer_port);
  CHECK(trained.summary.steps == 4);
  CHECK(trained.summary.groups_trained == 4 * c.groups_per_batch());
  CHECK(trained.summary.staleness_violations == 0);
  CHECK(trained.summary.incomplete_trained == 0);
  CHECK(served.summary.trajectories > 0);
  CHECK(served.windows.size() == 4);
  CHECK(std::filesystem::exists(served.dir / "report.json"));
  CHECK(std::filesystem::exists(trained.dir / "packs.jsonl"));
}

TEST_CASE("trainer names the unreachable buffer endpoint") {
  auto c = small_run(Mode::async, "wrong-port");
  const std::string url = "http://127.0.0.1:" + std::to_string(free_port());
  std::atomic<bool> stop{false};
  try {
    run_trainer(c, url, stop, 300);
    FAIL("expected a handshake failure");
  } catch (const WireError& e) {
    CHECK(std::string(e.what()).find(url) != std::string::npos);
  }
}

TEST_CASE("a busy buffer port is a startup error") {
  core::JsonHttpServer squatter;
  const int port = squatter.start("127.0.0.1", 0);
  auto c = small_run(Mode::async, "port-conflict");
  c.buffer_port = port;
  std::atomic<bool> stop{false};
  CHECK_THROWS_AS(serve_buffer(c, stop), WireError);
  squatter.stop();
}
