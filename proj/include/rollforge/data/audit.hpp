#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <regex>
#include <string>
#include <utility>
#include <vector>

#include "rollforge/data/dataset.hpp"

namespace rollforge::data {

enum class RiskType {
  harmful_content,
  toxicity,
  bias,
  pii_leakage,
  secret_leakage,
  label_flipping,
  factual_inconsistency,
  self_contradiction,
  instruction_mismatch,
  backdoor_injection,
  prompt_injection,
  jailbreak,
  sycophancy,
};

inline constexpr std::size_t kRiskTypeCount = 13;
const std::array<RiskType, kRiskTypeCount>& all_risk_types();
std::string to_string(RiskType r);
RiskType risk_type_from_string(const std::string& s);

struct AuditFinding {
  std::string sample_id;
  RiskType risk_type = RiskType::harmful_content;
  std::string checker_name;
  double severity = 1.0;
  std::optional<std::pair<std::size_t, std::size_t>> span;  // [start, end) in the checked field
  std::string field;                                        // "instruction" or "response"
  std::string evidence;

  bool operator==(const AuditFinding&) const = default;
};

void to_json(nlohmann::json& j, const AuditFinding& f);
void from_json(const nlohmann::json& j, AuditFinding& f);

// Luhn mod-10. Throws ValidationError on non-digits or length < 2.
bool luhn_valid(const std::string& digits);
// 17 digits + check char in [0-9X]. Throws ValidationError when malformed.
bool cn_id_checksum(const std::string& id);

class Checker {
 public:
  virtual ~Checker() = default;
  virtual std::string name() const = 0;
  virtual RiskType risk_type() const = 0;
  // Batch checkers see the whole dataset after the per-sample phase.
  virtual bool batch() const { return false; }
  virtual std::vector<AuditFinding> check(const DataSample&) const { return {}; }
  virtual std::vector<AuditFinding> check_batch(const std::vector<DataSample>&) const { return {}; }
};

// Phone numbers, emails, Luhn-valid card numbers, checksum-valid CN resident ids.
class PiiRule : public Checker {
 public:
  std::string name() const override { return "PIIRule"; }
  RiskType risk_type() const override { return RiskType::pii_leakage; }
  std::vector<AuditFinding> check(const DataSample& s) const override;
};

// AWS, GitHub, OpenAI, Slack, Google keys, JWTs and PEM private keys.
class SecretRule : public Checker {
 public:
  std::string name() const override { return "SecretRule"; }
  RiskType risk_type() const override { return RiskType::secret_leakage; }
  std::vector<AuditFinding> check(const DataSample& s) const override;
};

struct LexiconEntry {
  std::string term;  // lowercase
  double severity = 1.0;
};

// One term per line, optional tab-separated severity, '#' comments.
std::vector<LexiconEntry> load_lexicon(const std::filesystem::path& path);
std::vector<LexiconEntry> parse_lexicon(const std::string& text);

// Case-insensitive whole-word (or whole-phrase) lexicon match.
class KeywordRule : public Checker {
 public:
  KeywordRule(std::string name, RiskType risk, std::vector<LexiconEntry> lexicon);
  std::string name() const override { return name_; }
  RiskType risk_type() const override { return risk_; }
  std::vector<AuditFinding> check(const DataSample& s) const override;

 private:
  std::string name_;
  RiskType risk_;
  std::vector<LexiconEntry> lexicon_;
};

// Rare tokens that co-occur with one identical response across several
// otherwise unrelated instructions look like planted triggers.
class BackdoorHeuristic : public Checker {
 public:
  explicit BackdoorHeuristic(std::size_t min_support = 3, double max_doc_fraction = 0.2)
      : min_support_(min_support), max_doc_fraction_(max_doc_fraction) {}
  std::string name() const override { return "BackdoorHeuristic"; }
  RiskType risk_type() const override { return RiskType::backdoor_injection; }
  bool batch() const override { return true; }
  std::vector<AuditFinding> check_batch(const std::vector<DataSample>& samples) const override;

 private:
  std::size_t min_support_;
  double max_doc_fraction_;
};

struct CheckerSpec {
  std::string name;
  bool enabled = true;
  std::map<std::string, std::string> params;
};

struct AuditConfig {
  std::vector<CheckerSpec> checkers;
  std::map<RiskType, double> weights;  // missing risks default to 1
  std::filesystem::path lexicon_dir;
  std::size_t threads = 0;  // 0: hardware concurrency
};

// ROLLFORGE_LEXICON_DIR if set, else the lexicons shipped with the source tree.
std::filesystem::path bundled_lexicon_dir();

// Every rule-based checker enabled, uniform weights, bundled lexicons.
AuditConfig default_audit_config(const std::filesystem::path& lexicon_dir = bundled_lexicon_dir());
// YAML: {lexicon_dir, threads, weights: {risk: w}, checkers: [{name, enabled, <params>}]}.
AuditConfig load_audit_config(const std::filesystem::path& path);

using CheckerFactory = std::function<std::unique_ptr<Checker>(const CheckerSpec&, const AuditConfig&)>;

class CheckerRegistry {
 public:
  static CheckerRegistry& instance();
  void add(const std::string& name, CheckerFactory factory);
  // Names that need an external model; creating them raises ConfigError.
  void add_slot(const std::string& name, RiskType risk, const std::string& requirement);
  std::unique_ptr<Checker> create(const CheckerSpec& spec, const AuditConfig& config) const;
  std::vector<std::string> names() const;
  bool available(const std::string& name) const;

 private:
  CheckerRegistry();
  std::map<std::string, CheckerFactory> factories_;
  std::map<std::string, std::string> slots_;
};

struct CheckerStatus {
  std::string status = "ok";  // ok | partial_success
  std::size_t failures = 0;
  std::string last_error;
};

struct SafetyReport {
  std::string dataset;
  std::size_t total_samples = 0;
  std::map<RiskType, double> flagged_rates;
  std::map<RiskType, std::size_t> flagged_counts;
  std::map<RiskType, double> weights;
  double safety_score = 100.0;
  std::vector<AuditFinding> findings;
  std::map<std::string, CheckerStatus> checkers;
};

void to_json(nlohmann::json& j, const SafetyReport& r);

// 100 * (1 - sum w_r * rate_r / sum w_r), clamped. Rates are flagged samples over total.
double safety_score(const std::map<RiskType, double>& flagged_rates, const std::map<RiskType, double>& weights);
// Counts distinct flagged samples per risk; every known risk gets a rate.
std::map<RiskType, double> flagged_rates(const std::vector<AuditFinding>& findings, std::size_t total_samples);

// Sample checkers run in parallel over samples, then batch checkers sequentially.
// A throwing checker is recorded as partial_success; others are unaffected.
SafetyReport run_checkers(const Dataset& dataset, const std::vector<std::unique_ptr<Checker>>& checkers,
                          const std::map<RiskType, double>& weights, std::size_t threads = 0);
SafetyReport run_audit(const Dataset& dataset, const AuditConfig& config);

std::string render_markdown(const SafetyReport& report);

}  // namespace rollforge::data
