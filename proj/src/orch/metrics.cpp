#include "rollforge/orch/metrics.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "rollforge/core/jsonl.hpp"

namespace rollforge::orch {

using nlohmann::json;

double overlap_ms(const Interval& a, std::int64_t lo, std::int64_t hi) {
  const auto s = std::max(a.start_ms, lo);
  const auto e = std::min(a.end_ms, hi);
  return e > s ? static_cast<double>(e - s) : 0.0;
}

void to_json(json& j, const StepWindowMetrics& m) {
  json hist = json::object();
  for (const auto& [k, v] : m.staleness_histogram) hist[std::to_string(k)] = v;
  j = json{{"step", m.step},
           {"start_ms", m.start_ms},
           {"end_ms", m.end_ms},
           {"trajectories_generated", m.trajectories_generated},
           {"batches_trained", m.batches_trained},
           {"rollout_busy_ms", m.rollout_busy_ms},
           {"rollout_idle_ms", m.rollout_idle_ms},
           {"train_busy_ms", m.train_busy_ms},
           {"train_idle_ms", m.train_idle_ms},
           {"groups_trained", m.groups_trained},
           {"mean_staleness", m.mean_staleness},
           {"staleness_histogram", hist}};
  j["loss"] = m.loss ? json(*m.loss) : json(nullptr);
}

void from_json(const json& j, StepWindowMetrics& m) {
  m.step = j.at("step").get<std::size_t>();
  m.start_ms = j.at("start_ms").get<std::int64_t>();
  m.end_ms = j.at("end_ms").get<std::int64_t>();
  m.trajectories_generated = j.at("trajectories_generated").get<std::size_t>();
  m.batches_trained = j.value("batches_trained", std::size_t{0});
  m.rollout_busy_ms = j.at("rollout_busy_ms").get<double>();
  m.rollout_idle_ms = j.at("rollout_idle_ms").get<double>();
  m.train_busy_ms = j.value("train_busy_ms", 0.0);
  m.train_idle_ms = j.value("train_idle_ms", 0.0);
  m.groups_trained = j.value("groups_trained", std::size_t{0});
  m.mean_staleness = j.value("mean_staleness", 0.0);
  m.staleness_histogram.clear();
  if (j.contains("staleness_histogram")) {
    for (const auto& [k, v] : j["staleness_histogram"].items()) m.staleness_histogram[std::stoull(k)] = v.get<std::size_t>();
  }
  m.loss.reset();
  if (j.contains("loss") && !j["loss"].is_null()) m.loss = j["loss"].get<double>();
}

std::vector<StepWindowMetrics> compute_windows(const WindowInputs& in) {
  std::vector<StepWindowMetrics> out;
  std::int64_t lo = in.run_start_ms;
  for (std::size_t k = 0; k < in.bumps.size(); ++k) {
    const std::int64_t hi = std::max(in.bumps[k], lo);
    StepWindowMetrics w;
    w.step = k;
    w.start_ms = lo - in.run_start_ms;
    w.end_ms = hi - in.run_start_ms;
    for (const auto& iv : in.rollout_busy) w.rollout_busy_ms += overlap_ms(iv, lo, hi);
    w.rollout_idle_ms = static_cast<double>(in.rollout_workers) * static_cast<double>(hi - lo) - w.rollout_busy_ms;
    for (auto t : in.trajectory_done_ms) {
      if (t >= lo && t < hi) ++w.trajectories_generated;
    }
    for (const auto& rec : in.train) {
      w.train_busy_ms += overlap_ms(rec.busy, lo, hi);
      if (rec.busy.end_ms == in.bumps[k]) {
        ++w.batches_trained;
        w.loss = rec.loss;
        w.groups_trained += rec.staleness.size();
        double sum = 0.0;
        for (auto s : rec.staleness) {
          sum += static_cast<double>(s);
          ++w.staleness_histogram[s];
        }
        if (!rec.staleness.empty()) w.mean_staleness = sum / static_cast<double>(rec.staleness.size());
      }
    }
    if (!in.train.empty()) w.train_idle_ms = static_cast<double>(hi - lo) - w.train_busy_ms;
    out.push_back(std::move(w));
    lo = hi;
  }
  return out;
}

double rollout_idle_fraction(const std::vector<StepWindowMetrics>& windows) {
  double busy = 0.0, idle = 0.0;
  for (const auto& w : windows) {
    busy += w.rollout_busy_ms;
    idle += w.rollout_idle_ms;
  }
  return busy + idle > 0 ? idle / (busy + idle) : 0.0;
}

double mean_trajectories_per_window(const std::vector<StepWindowMetrics>& windows) {
  if (windows.empty()) return 0.0;
  double total = 0.0;
  for (const auto& w : windows) total += static_cast<double>(w.trajectories_generated);
  return total / static_cast<double>(windows.size());
}

#define RF_FIELDS(X)                                                                                             \
  X(run_id) X(mode) X(window_definition) X(steps) X(pool_size) X(group_size) X(off_by_n) X(wall_ms)            \
  X(trajectories) X(trajectory_failures) X(groups_submitted) X(groups_rejected) X(groups_abandoned) X(groups_trained)              \
  X(groups_evicted) X(staleness_violations) X(incomplete_trained) X(mean_trajectories_per_window)              \
  X(rollout_idle_fraction) X(mean_staleness) X(mean_loss) X(inference_requests) X(inference_persisted)         \
  X(inference_dropped) X(checkpoints) X(rollbacks) X(packs) X(oversize_samples) X(warnings)

void to_json(json& j, const RunSummary& s) {
  j = json::object();
#define X(f) j[#f] = s.f;
  RF_FIELDS(X)
#undef X
}

void from_json(const json& j, RunSummary& s) {
#define X(f) \
  if (j.contains(#f)) j.at(#f).get_to(s.f);
  RF_FIELDS(X)
#undef X
}

#undef RF_FIELDS

RunRecord load_run(const std::filesystem::path& dir) {
  RunRecord r;
  r.dir = dir;
  const auto summary = dir / "report.json";
  if (std::filesystem::exists(summary)) {
    try {
      std::ifstream in(summary);
      const auto doc = json::parse(in);
      r.summary = doc.at("summary").get<RunSummary>();
    } catch (const json::exception&) {
      r.gaps.push_back("report.json: unreadable summary");
    }
  } else {
    r.gaps.push_back("report.json missing");
  }
  const auto metrics = dir / "metrics.jsonl";
  if (std::filesystem::exists(metrics)) {
    auto read = core::read_jsonl(metrics);
    r.skipped_lines = read.skipped;
    for (const auto& rec : read.records) {
      try {
        r.windows.push_back(rec.get<StepWindowMetrics>());
      } catch (const json::exception&) {
        ++r.skipped_lines;
      }
    }
  } else {
    r.gaps.push_back("metrics.jsonl missing");
  }
  return r;
}

namespace {

struct Derived {
  std::string label;
  std::string mode;
  double traj_per_window = 0.0;
  double idle_fraction = 0.0;
  double mean_window_ms = 0.0;
  double mean_rollout_busy_ms = 0.0;
  double mean_train_busy_ms = 0.0;
  double traj_per_second = 0.0;
  std::map<std::uint64_t, std::size_t> staleness;
};

Derived derive(const RunRecord& r) {
  Derived d;
  d.label = r.summary ? r.summary->run_id : r.dir.filename().string();
  d.mode = r.summary ? r.summary->mode : "unknown";
  d.traj_per_window = mean_trajectories_per_window(r.windows);
  d.idle_fraction = rollout_idle_fraction(r.windows);
  double wall = 0.0, traj = 0.0;
  for (const auto& w : r.windows) {
    wall += w.wall_ms();
    traj += static_cast<double>(w.trajectories_generated);
    d.mean_rollout_busy_ms += w.rollout_busy_ms;
    d.mean_train_busy_ms += w.train_busy_ms;
    for (const auto& [k, v] : w.staleness_histogram) d.staleness[k] += v;
  }
  if (!r.windows.empty()) {
    const auto n = static_cast<double>(r.windows.size());
    d.mean_window_ms = wall / n;
    d.mean_rollout_busy_ms /= n;
    d.mean_train_busy_ms /= n;
  }
  d.traj_per_second = wall > 0 ? traj / (wall / 1000.0) : 0.0;
  return d;
}

std::size_t baseline_index(const std::vector<Derived>& ds) {
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds[i].mode == "sync") return i;
  }
  return 0;
}

}  // namespace

std::string render_markdown(const std::vector<RunRecord>& runs) {
  std::ostringstream md;
  md << std::fixed << std::setprecision(2);
  md << "# Rollout report\n\n";
  md << "Window accounting: " << kWindowDefinition << ".\n\n";
  std::vector<Derived> ds;
  for (const auto& r : runs) ds.push_back(derive(r));
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const auto& r = runs[i];
    const auto& d = ds[i];
    md << "## Run " << d.label << " (" << d.mode << ")\n\n";
    for (const auto& g : r.gaps) md << "- gap: " << g << "\n";
    if (r.skipped_lines > 0) md << "- warning: " << r.skipped_lines << " corrupted metrics line(s) skipped\n";
    if (!r.gaps.empty() || r.skipped_lines > 0) md << "\n";
    if (r.windows.empty()) {
      md << "No step windows recorded.\n\n";
    } else {
      md << "| Stage | Mean per window |\n|---|---:|\n";
      md << "| window wall time (ms) | " << d.mean_window_ms << " |\n";
      md << "| rollout busy, all workers (ms) | " << d.mean_rollout_busy_ms << " |\n";
      md << "| train busy (ms) | " << d.mean_train_busy_ms << " |\n";
      md << "| trajectories generated | " << d.traj_per_window << " |\n\n";
      md << "Rollout idle fraction: " << 100.0 * d.idle_fraction << "%  \n";
      md << "Trajectories per second: " << d.traj_per_second << "\n\n";
      if (!d.staleness.empty()) {
        md << "| Staleness | Groups trained |\n|---:|---:|\n";
        for (const auto& [k, v] : d.staleness) md << "| " << k << " | " << v << " |\n";
        md << "\n";
      }
    }
    if (r.summary) {
      const auto& s = *r.summary;
      md << "| Counter | Value |\n|---|---:|\n";
      md << "| steps | " << s.steps << " |\n";
      md << "| trajectories | " << s.trajectories << " |\n";
      md << "| transport failures | " << s.trajectory_failures << " |\n";
      md << "| groups submitted | " << s.groups_submitted << " |\n";
      md << "| groups rejected (incomplete) | " << s.groups_rejected << " |\n";
      md << "| groups trained | " << s.groups_trained << " |\n";
      md << "| groups evicted (over stale) | " << s.groups_evicted << " |\n";
      md << "| staleness violations | " << s.staleness_violations << " |\n";
      md << "| incomplete groups trained | " << s.incomplete_trained << " |\n";
      md << "| mean loss | " << std::setprecision(6) << s.mean_loss << std::setprecision(2) << " |\n";
      md << "| inference requests | " << s.inference_requests << " |\n";
      md << "| inference records persisted | " << s.inference_persisted << " |\n";
      md << "| checkpoints / rollbacks | " << s.checkpoints << " / " << s.rollbacks << " |\n\n";
      for (const auto& w : s.warnings) md << "- " << w << "\n";
      if (!s.warnings.empty()) md << "\n";
    }
  }
  if (runs.size() >= 2) {
    const auto base = baseline_index(ds);
    md << "## Ratios against " << ds[base].label << " (" << ds[base].mode << ")\n\n";
    md << "| Run | Mode | Trajectories per window | Ratio | Trajectories per second | Ratio |\n";
    md << "|---|---|---:|---:|---:|---:|\n";
    for (std::size_t i = 0; i < ds.size(); ++i) {
      if (i == base) continue;
      const double r1 = ds[base].traj_per_window > 0 ? ds[i].traj_per_window / ds[base].traj_per_window : 0.0;
      const double r2 = ds[base].traj_per_second > 0 ? ds[i].traj_per_second / ds[base].traj_per_second : 0.0;
      md << "| " << ds[i].label << " | " << ds[i].mode << " | " << ds[i].traj_per_window << " | " << r1 << " | "
         << ds[i].traj_per_second << " | " << r2 << " |\n";
    }
    md << "\n";
  }
  return md.str();
}

json render_json(const std::vector<RunRecord>& runs) {
  json out = {{"window_definition", kWindowDefinition}, {"runs", json::array()}};
  std::vector<Derived> ds;
  for (const auto& r : runs) ds.push_back(derive(r));
  for (std::size_t i = 0; i < runs.size(); ++i) {
    json staleness = json::object();
    for (const auto& [k, v] : ds[i].staleness) staleness[std::to_string(k)] = v;
    json run = {{"dir", runs[i].dir.string()},
                {"label", ds[i].label},
                {"mode", ds[i].mode},
                {"windows", runs[i].windows.size()},
                {"trajectories_per_window", ds[i].traj_per_window},
                {"trajectories_per_second", ds[i].traj_per_second},
                {"rollout_idle_fraction", ds[i].idle_fraction},
                {"mean_window_ms", ds[i].mean_window_ms},
                {"staleness_histogram", staleness},
                {"skipped_lines", runs[i].skipped_lines},
                {"gaps", runs[i].gaps}};
    if (runs[i].summary) run["summary"] = *runs[i].summary;
    out["runs"].push_back(std::move(run));
  }
  if (runs.size() >= 2) {
    const auto base = baseline_index(ds);
    json ratios = json::array();
    for (std::size_t i = 0; i < ds.size(); ++i) {
      if (i == base) continue;
      ratios.push_back({{"run", ds[i].label},
                        {"baseline", ds[base].label},
                        {"trajectories_per_window_ratio",
                         ds[base].traj_per_window > 0 ? ds[i].traj_per_window / ds[base].traj_per_window : 0.0},
                        {"trajectories_per_second_ratio",
                         ds[base].traj_per_second > 0 ? ds[i].traj_per_second / ds[base].traj_per_second : 0.0}});
    }
    out["ratios"] = ratios;
  }
  return out;
}

}  // namespace rollforge::orch
