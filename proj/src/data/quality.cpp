#include "rollforge/data/quality.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <set>

#include "rollforge/core/errors.hpp"
#include "rollforge/core/hash.hpp"

namespace rollforge::data {

using nlohmann::json;

namespace {

std::vector<std::string> words(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

}  // namespace

double MockLogprobBackend::mean_nll(const std::string& context, const std::string& response) {
  ++calls_;
  if (response.empty()) return 0.0;
  const double base = 0.5 + 2.5 * core::unit_from_hash(core::Fnv1a{}.add(seed_).add(response).digest());
  if (ignore_context_ || context.empty()) return base;
  const auto rw = words(response);
  if (rw.empty()) return base;
  const auto cw = words(context);
  const std::set<std::string> ctx(cw.begin(), cw.end());
  const auto covered = std::count_if(rw.begin(), rw.end(), [&](const std::string& w) { return ctx.count(w) > 0; });
  return base * (1.0 - 0.5 * static_cast<double>(covered) / static_cast<double>(rw.size()));
}

double MockQualityBackend::quality(const DataSample& sample) {
  ++calls_;
  const auto h = core::Fnv1a{}.add(seed_).add(sample.instruction).add(std::string_view("\x1f", 1)).add(sample.response);
  return 1.0 + 5.0 * core::unit_from_hash(h.digest());
}

IfdResult IfdScorer::lookup(const DataSample& sample) {
  const auto key = std::make_pair(sample.id, backend_.id());
  {
    std::lock_guard lock(mu_);
    if (auto it = cache_.find(key); it != cache_.end()) {
      ++cache_hits_;
      return it->second;
    }
  }
  IfdResult r;
  r.conditioned_nll = backend_.mean_nll(sample.instruction, sample.response);
  r.unconditioned_nll = backend_.mean_nll("", sample.response);
  if (r.unconditioned_nll != 0.0) r.ifd = r.conditioned_nll / r.unconditioned_nll;
  std::lock_guard lock(mu_);
  backend_calls_ += 2;
  cache_.emplace(key, r);
  return r;
}

IfdResult IfdScorer::score(const DataSample& sample) { return lookup(sample); }

double IfdScorer::perplexity(const DataSample& sample) { return std::exp(lookup(sample).conditioned_nll); }

double QualityScorer::score(const DataSample& sample) {
  const auto key = std::make_pair(sample.id, backend_.id());
  {
    std::lock_guard lock(mu_);
    if (auto it = cache_.find(key); it != cache_.end()) {
      ++cache_hits_;
      return it->second;
    }
  }
  const double q = backend_.quality(sample);
  std::lock_guard lock(mu_);
  ++backend_calls_;
  cache_.emplace(key, q);
  return q;
}

void to_json(json& j, const QualityScore& s) {
  j = json{{"sample_id", s.sample_id}, {"raw", s.raw}, {"percentiles", s.percentiles}, {"fused", s.fused}};
  if (s.undefined) j["undefined"] = true;
}

void from_json(const json& j, QualityScore& s) {
  s.sample_id = j.at("sample_id").get<std::string>();
  s.raw = j.value("raw", std::map<std::string, double>{});
  s.percentiles = j.value("percentiles", std::map<std::string, double>{});
  s.fused = j.value("fused", 0.0);
  s.undefined = j.value("undefined", false);
}

std::vector<double> percentile_ranks(const std::vector<double>& values) {
  const std::size_t n = values.size();
  if (n < 2) throw ValidationError("scores", "percentile needs at least 2 samples, got " + std::to_string(n));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j);
    for (std::size_t k = i; k <= j; ++k) out[order[k]] = rank / static_cast<double>(n - 1);
    i = j + 1;
  }
  return out;
}

void fuse_dataelf(std::vector<QualityScore>& scores) {
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    auto& s = scores[i];
    s.percentiles.clear();
    s.fused = 0.0;
    if (s.undefined) continue;
    if (!s.raw.count(kIfd) || !s.raw.count(kQuality)) {
      throw ValidationError("raw", "sample '" + s.sample_id + "' lacks an ifd or quality score");
    }
    pool.push_back(i);
  }
  for (const char* name : {kIfd, kQuality}) {
    std::vector<double> raw;
    for (auto i : pool) raw.push_back(scores[i].raw.at(name));
    const auto pct = percentile_ranks(raw);
    for (std::size_t k = 0; k < pool.size(); ++k) scores[pool[k]].percentiles[name] = pct[k];
  }
  for (auto i : pool) scores[i].fused = 0.5 * scores[i].percentiles[kIfd] + 0.5 * scores[i].percentiles[kQuality];
}

std::vector<QualityScore> score_dataset(const Dataset& dataset, IfdScorer& ifd, QualityScorer& quality) {
  std::vector<QualityScore> out;
  out.reserve(dataset.samples.size());
  for (const auto& s : dataset.samples) {
    QualityScore q;
    q.sample_id = s.id;
    const auto r = ifd.score(s);
    if (r.ifd) {
      q.raw[kIfd] = *r.ifd;
    } else {
      q.undefined = true;
    }
    q.raw[kPerplexity] = std::exp(r.conditioned_nll);
    q.raw[kQuality] = quality.score(s);
    out.push_back(std::move(q));
  }
  fuse_dataelf(out);
  return out;
}

}  // namespace rollforge::data
