// rollforge command-line front end.

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "rollforge/core/errors.hpp"
#include "rollforge/data/audit.hpp"
#include "rollforge/data/dataset.hpp"
#include "rollforge/data/quality.hpp"
#include "rollforge/data/select.hpp"
#include "rollforge/orch/config.hpp"
#include "rollforge/orch/metrics.hpp"
#include "rollforge/orch/run.hpp"

namespace fs = std::filesystem;
using namespace rollforge;

namespace {

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

struct RunFlags {
  std::string mode;
  std::optional<fs::path> config_file;
  std::optional<fs::path> env_config;
  std::optional<fs::path> env_root;
  std::optional<std::size_t> pool_size, group_size, global_batch_size, steps;
  std::optional<std::uint64_t> off_by_n, seed, teacher_seed;
  std::optional<int> max_env_steps, epochs;
  std::optional<std::int64_t> rollout_ms, train_ms;
  std::optional<double> kl_weight;
  bool checkpoints = false;
  bool incremental_layout = false;
  std::optional<fs::path> runs_root;
  std::optional<std::string> run_id;
};

void add_run_flags(CLI::App* app, RunFlags& f) {
  app->add_option("--mode", f.mode, "sync or async")->check(CLI::IsMember({"sync", "async"}));
  app->add_option("--config", f.config_file, "run config YAML (flags override it)");
  app->add_option("--env-config", f.env_config, "single environment YAML (AIEVOBOX_ENV_CONFIG)");
  app->add_option("--env-root", f.env_root, "directory of environment YAMLs (AIEVOBOX_ENV_ROOT)");
  app->add_option("--pool-size", f.pool_size, "environments and rollout workers");
  app->add_option("--group-size", f.group_size, "trajectories per group (RL_GROUP_SIZE)");
  app->add_option("--global-batch-size", f.global_batch_size, "trajectories per batch (SLIME_GLOBAL_BATCH_SIZE)");
  app->add_option("--off-by-n", f.off_by_n, "staleness bound (RL_OFF_BY_N)");
  app->add_option("--epochs", f.epochs, "loss passes per batch (RL_EPOCH)");
  app->add_option("--steps", f.steps, "trainer steps");
  app->add_option("--max-env-steps", f.max_env_steps, "environment steps per trajectory");
  app->add_option("--rollout-ms", f.rollout_ms, "simulated time per trajectory");
  app->add_option("--train-ms", f.train_ms, "simulated time per batch");
  app->add_option("--seed", f.seed);
  app->add_option("--kl-weight", f.kl_weight, "weight of the reverse-KL term");
  app->add_option("--teacher-seed", f.teacher_seed, "attach a frozen mock teacher");
  app->add_flag("--checkpoints", f.checkpoints, "anchor risky steps and roll back on rejected actions");
  app->add_flag("--incremental-layout", f.incremental_layout, "treat step prompts as fresh segments");
  app->add_option("--runs-root", f.runs_root, "parent of run directories");
  app->add_option("--run-id", f.run_id);
}

orch::RunConfig build_config(const RunFlags& f, bool needs_env = true) {
  orch::RunConfig c;
  if (f.config_file) {
    std::ifstream in(*f.config_file);
    if (!in) throw ConfigError("cannot read " + f.config_file->string());
    std::stringstream text;
    text << in.rdbuf();
    c = orch::run_config_from_yaml(text.str());
  }
  c = orch::apply_env(c);
  if (!f.mode.empty()) c.mode = orch::mode_from_string(f.mode);
  if (f.env_config || f.env_root || (needs_env && c.env.tasks.empty())) {
    c.env = orch::resolve_env(f.env_config, f.env_root, &c.env_source);
  } else if (c.env.tasks.empty()) {
    c.env.tasks = {"remote"};  // the trainer never touches environments
  }
  if (f.pool_size) c.pool_size = *f.pool_size;
  if (f.group_size) c.group_size = *f.group_size;
  if (f.global_batch_size) c.global_batch_size = *f.global_batch_size;
  if (f.off_by_n) c.off_by_n = *f.off_by_n;
  if (f.epochs) c.epochs = *f.epochs;
  if (f.steps) c.total_steps = *f.steps;
  if (f.max_env_steps) c.max_env_steps = *f.max_env_steps;
  if (f.rollout_ms) c.rollout_time_ms = *f.rollout_ms;
  if (f.train_ms) c.train_time_ms = *f.train_ms;
  if (f.seed) c.seed = *f.seed;
  if (f.kl_weight) c.kl_weight = *f.kl_weight;
  if (f.teacher_seed) c.teacher_seed = *f.teacher_seed;
  if (f.checkpoints) c.checkpoints = true;
  if (f.incremental_layout) c.full_context_layout = false;
  if (f.runs_root) c.runs_root = *f.runs_root;
  if (f.run_id) c.run_id = *f.run_id;
  orch::validate(c);
  return c;
}

void print_summary(const orch::RunResult& r) {
  const auto& s = r.summary;
  std::cout << "run dir: " << r.dir.string() << "\n"
            << "steps: " << s.steps << "  trajectories: " << s.trajectories
            << "  per window: " << s.mean_trajectories_per_window << "\n"
            << "rollout idle: " << 100.0 * s.rollout_idle_fraction << "%  staleness violations: "
            << s.staleness_violations << "  incomplete trained: " << s.incomplete_trained << "\n";
}

int cmd_report(const std::vector<fs::path>& dirs, const std::optional<fs::path>& json_out) {
  std::vector<orch::RunRecord> runs;
  for (const auto& d : dirs) {
    if (!fs::is_directory(d)) throw ConfigError("not a run directory: " + d.string());
    runs.push_back(orch::load_run(d));
  }
  std::cout << orch::render_markdown(runs);
  if (json_out) std::ofstream(*json_out) << orch::render_json(runs).dump(2) << "\n";
  return 0;
}

int cmd_audit(const fs::path& dataset_path, const std::optional<fs::path>& config_path,
              const std::optional<fs::path>& out) {
  const auto dataset = data::load_dataset(dataset_path);
  const auto config = config_path ? data::load_audit_config(*config_path) : data::default_audit_config();
  const auto report = data::run_audit(dataset, config);
  std::cout << data::render_markdown(report);
  if (out) std::ofstream(*out) << nlohmann::json(report).dump(2) << "\n";
  for (const auto& [name, status] : report.checkers) {
    if (status.status != "ok") return 2;
  }
  return 0;
}

int cmd_score(const fs::path& dataset_path, std::size_t select, std::size_t clusters, std::uint64_t seed,
              const std::optional<fs::path>& out) {
  const auto dataset = data::load_dataset(dataset_path);
  data::MockLogprobBackend logprobs(seed);
  data::MockQualityBackend quality(seed);
  data::IfdScorer ifd(logprobs);
  data::QualityScorer q(quality);
  const auto scores = data::score_dataset(dataset, ifd, q);

  std::ostream* sink = &std::cout;
  std::ofstream file;
  if (out) {
    file.open(*out);
    sink = &file;
  }
  for (const auto& s : scores) *sink << nlohmann::json(s).dump() << "\n";

  if (select > 0) {
    data::MockEmbeddingBackend embedder(16, seed);
    std::vector<data::Embedding> embeddings;
    for (const auto& s : dataset.samples) embeddings.push_back(embedder.embed(s));
    const auto clusters_used = clusters > 0 ? clusters : std::max<std::size_t>(1, select / 4);
    const auto sel = data::select_diverse(scores, embeddings, select, clusters_used, seed);
    std::cerr << "selected " << sel.sample_ids.size() << " of " << dataset.samples.size() << " across "
              << sel.cluster_sizes.size() << " clusters\n";
    std::cout << nlohmann::json{{"selected", sel.sample_ids}, {"quotas", sel.quotas}}.dump() << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rollforge: rollout orchestration, training-sample forge and data suite"};
  app.require_subcommand(1);
  fs::path dotenv = ".env";
  app.add_option("--dotenv", dotenv, "environment file loaded before anything else");

  RunFlags run_flags;
  auto* run_cmd = app.add_subcommand("run", "single-process rollout and simulated training");
  add_run_flags(run_cmd, run_flags);

  RunFlags server_flags;
  std::optional<int> server_port, gateway_port;
  auto* server_cmd = app.add_subcommand("buffer-server", "buffer, gateway and rollout workers");
  add_run_flags(server_cmd, server_flags);
  server_cmd->add_option("--port", server_port, "buffer port (BUFFER_SERVER_PORT)");
  server_cmd->add_option("--gateway-port", gateway_port, "gateway port (LLM_PROXY_PORT)");

  RunFlags trainer_flags;
  std::string buffer_url;
  std::int64_t handshake_ms = 10000;
  auto* trainer_cmd = app.add_subcommand("trainer", "simulated trainer against a remote buffer server");
  add_run_flags(trainer_cmd, trainer_flags);
  trainer_cmd->add_option("--buffer", buffer_url, "buffer server URL");
  trainer_cmd->add_option("--handshake-timeout-ms", handshake_ms);

  std::vector<fs::path> report_dirs;
  std::optional<fs::path> report_json;
  auto* report_cmd = app.add_subcommand("report", "render Markdown (and JSON) from run directories");
  report_cmd->add_option("rundirs", report_dirs)->required();
  report_cmd->add_option("--json", report_json, "also write the JSON summary here");

  fs::path audit_dataset;
  std::optional<fs::path> audit_config, audit_out;
  auto* audit_cmd = app.add_subcommand("audit", "safety audit of an instruction dataset");
  audit_cmd->add_option("dataset", audit_dataset)->required();
  audit_cmd->add_option("--config", audit_config, "audit config YAML");
  audit_cmd->add_option("--out", audit_out, "write the JSON report here");

  fs::path score_dataset;
  std::size_t select = 0, clusters = 0;
  std::uint64_t score_seed = 0;
  std::optional<fs::path> score_out;
  auto* score_cmd = app.add_subcommand("score", "IFD and quality scores, optional diverse selection");
  score_cmd->add_option("dataset", score_dataset)->required();
  score_cmd->add_option("--select", select, "pick K samples");
  score_cmd->add_option("--clusters", clusters, "k-means clusters (default K/4)");
  score_cmd->add_option("--seed", score_seed);
  score_cmd->add_option("--out", score_out, "write scores JSONL here instead of stdout");

  CLI11_PARSE(app, argc, argv);

  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);

  try {
    orch::load_dotenv(dotenv);
    if (run_cmd->parsed()) {
      const auto r = orch::run(build_config(run_flags), &g_stop);
      print_summary(r);
      return 0;
    }
    if (server_cmd->parsed()) {
      auto c = build_config(server_flags);
      if (server_port) c.buffer_port = *server_port;
      if (gateway_port) c.gateway_port = *gateway_port;
      const auto r = orch::serve_buffer(c, g_stop, [](int bp, int gp) {
        std::cout << "buffer server on port " << bp << ", gateway on port " << gp << std::endl;
      });
      print_summary(r);
      return 0;
    }
    if (trainer_cmd->parsed()) {
      auto c = build_config(trainer_flags, false);
      if (buffer_url.empty()) buffer_url = "http://" + c.buffer_host + ":" + std::to_string(c.buffer_port);
      const auto r = orch::run_trainer(c, buffer_url, g_stop, handshake_ms);
      std::cout << "trained " << r.summary.steps << " steps; groups " << r.summary.groups_trained
                << "; staleness violations " << r.summary.staleness_violations << "\n";
      return 0;
    }
    if (report_cmd->parsed()) return cmd_report(report_dirs, report_json);
    if (audit_cmd->parsed()) return cmd_audit(audit_dataset, audit_config, audit_out);
    if (score_cmd->parsed()) return cmd_score(score_dataset, select, clusters, score_seed, score_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
