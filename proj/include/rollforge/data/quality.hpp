#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "rollforge/data/dataset.hpp"

namespace rollforge::data {

// Mean per-token negative log-probability of `response` given `context`.
class LogprobBackend {
 public:
  virtual ~LogprobBackend() = default;
  virtual double mean_nll(const std::string& context, const std::string& response) = 0;
  virtual std::string id() const = 0;
};

// Unconditioned nll is a hash of the response in [0.5, 3.0). Conditioning
// scales it by 1 - 0.5 * (fraction of response words present in the context),
// so an instruction that contains the whole response halves it.
class MockLogprobBackend : public LogprobBackend {
 public:
  explicit MockLogprobBackend(std::uint64_t seed = 0, bool ignore_context = false)
      : seed_(seed), ignore_context_(ignore_context) {}
  double mean_nll(const std::string& context, const std::string& response) override;
  std::string id() const override { return "mock-lm-" + std::to_string(seed_); }
  std::uint64_t calls() const { return calls_.load(); }

 private:
  std::uint64_t seed_;
  bool ignore_context_;
  std::atomic<std::uint64_t> calls_{0};
};

// Stand-in for a DEITA-style quality model: any deterministic per-sample scalar.
class QualityBackend {
 public:
  virtual ~QualityBackend() = default;
  virtual double quality(const DataSample& sample) = 0;
  virtual std::string id() const = 0;
};

class MockQualityBackend : public QualityBackend {
 public:
  explicit MockQualityBackend(std::uint64_t seed = 0) : seed_(seed) {}
  double quality(const DataSample& sample) override;  // in [1, 6)
  std::string id() const override { return "mock-quality-" + std::to_string(seed_); }
  std::uint64_t calls() const { return calls_.load(); }

 private:
  std::uint64_t seed_;
  std::atomic<std::uint64_t> calls_{0};
};

inline constexpr const char* kIfd = "ifd";
inline constexpr const char* kQuality = "deita_q";
inline constexpr const char* kPerplexity = "ppl";

struct IfdResult {
  std::optional<double> ifd;  // empty when the unconditioned nll is zero
  double conditioned_nll = 0.0;
  double unconditioned_nll = 0.0;
};

// IFD and perplexity scorer with a per-(sample_id, backend_id) cache.
class IfdScorer {
 public:
  explicit IfdScorer(LogprobBackend& backend) : backend_(backend) {}

  IfdResult score(const DataSample& sample);
  double perplexity(const DataSample& sample);  // exp of conditioned nll

  std::uint64_t backend_calls() const { return backend_calls_; }
  std::uint64_t cache_hits() const { return cache_hits_; }

 private:
  IfdResult lookup(const DataSample& sample);

  LogprobBackend& backend_;
  std::mutex mu_;
  std::map<std::pair<std::string, std::string>, IfdResult> cache_;
  std::uint64_t backend_calls_ = 0;
  std::uint64_t cache_hits_ = 0;
};

// Caches quality scores by (sample_id, backend_id).
class QualityScorer {
 public:
  explicit QualityScorer(QualityBackend& backend) : backend_(backend) {}
  double score(const DataSample& sample);
  std::uint64_t backend_calls() const { return backend_calls_; }
  std::uint64_t cache_hits() const { return cache_hits_; }

 private:
  QualityBackend& backend_;
  std::mutex mu_;
  std::map<std::pair<std::string, std::string>, double> cache_;
  std::uint64_t backend_calls_ = 0;
  std::uint64_t cache_hits_ = 0;
};

struct QualityScore {
  std::string sample_id;
  std::map<std::string, double> raw;
  std::map<std::string, double> percentiles;
  double fused = 0.0;
  bool undefined = false;  // excluded from the percentile pool

  bool operator==(const QualityScore&) const = default;
};

void to_json(nlohmann::json& j, const QualityScore& s);
void from_json(const nlohmann::json& j, QualityScore& s);

// rank/(n-1) with average ranks for ties; min maps to 0, max to 1.
std::vector<double> percentile_ranks(const std::vector<double>& values);

// Fills percentiles for IFD and quality over the defined samples, then fused = equal-weight mean.
// Undefined samples get fused 0 and no percentiles.
void fuse_dataelf(std::vector<QualityScore>& scores);

std::vector<QualityScore> score_dataset(const Dataset& dataset, IfdScorer& ifd, QualityScorer& quality);

}  // namespace rollforge::data
