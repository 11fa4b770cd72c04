#include "rollforge/data/audit.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <yaml-cpp/yaml.h>

#include "rollforge/core/errors.hpp"

namespace rollforge::data {

using nlohmann::json;

namespace {

const std::array<std::pair<RiskType, const char*>, kRiskTypeCount> kRiskNames{{
    {RiskType::harmful_content, "harmful_content"},
    {RiskType::toxicity, "toxicity"},
    {RiskType::bias, "bias"},
    {RiskType::pii_leakage, "pii_leakage"},
    {RiskType::secret_leakage, "secret_leakage"},
    {RiskType::label_flipping, "label_flipping"},
    {RiskType::factual_inconsistency, "factual_inconsistency"},
    {RiskType::self_contradiction, "self_contradiction"},
    {RiskType::instruction_mismatch, "instruction_mismatch"},
    {RiskType::backdoor_injection, "backdoor_injection"},
    {RiskType::prompt_injection, "prompt_injection"},
    {RiskType::jailbreak, "jailbreak"},
    {RiskType::sycophancy, "sycophancy"},
}};

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

bool word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

std::string redact(const std::string& s) {
  if (s.size() <= 8) return std::string(s.size(), '*');
  return s.substr(0, 4) + std::string(s.size() - 6, '*') + s.substr(s.size() - 2);
}

struct Field {
  const char* name;
  const std::string& text;
};

std::array<Field, 2> fields(const DataSample& s) { return {Field{"instruction", s.instruction}, Field{"response", s.response}}; }

AuditFinding finding(const DataSample& s, const Checker& c, const Field& f, std::size_t start, std::size_t len,
                     double severity, std::string evidence) {
  AuditFinding out;
  out.sample_id = s.id;
  out.risk_type = c.risk_type();
  out.checker_name = c.name();
  out.severity = severity;
  out.span = std::make_pair(start, start + len);
  out.field = f.name;
  out.evidence = std::move(evidence);
  return out;
}

struct Pattern {
  const char* kind;
  std::regex re;
  double severity;
};

}  // namespace

const std::array<RiskType, kRiskTypeCount>& all_risk_types() {
  static const auto all = [] {
    std::array<RiskType, kRiskTypeCount> out{};
    for (std::size_t i = 0; i < kRiskTypeCount; ++i) out[i] = kRiskNames[i].first;
    return out;
  }();
  return all;
}

std::string to_string(RiskType r) {
  for (const auto& [k, v] : kRiskNames) {
    if (k == r) return v;
  }
  return "unknown";
}

RiskType risk_type_from_string(const std::string& s) {
  for (const auto& [k, v] : kRiskNames) {
    if (s == v) return k;
  }
  throw ValidationError("risk_type", "unknown risk type '" + s + "'");
}

void to_json(json& j, const AuditFinding& f) {
  j = json{{"sample_id", f.sample_id}, {"risk_type", to_string(f.risk_type)}, {"checker_name", f.checker_name},
           {"severity", f.severity},   {"field", f.field},                      {"evidence", f.evidence}};
  j["span"] = f.span ? json::array({f.span->first, f.span->second}) : json(nullptr);
}

void from_json(const json& j, AuditFinding& f) {
  f.sample_id = j.at("sample_id").get<std::string>();
  f.risk_type = risk_type_from_string(j.at("risk_type").get<std::string>());
  f.checker_name = j.at("checker_name").get<std::string>();
  f.severity = j.value("severity", 1.0);
  f.field = j.value("field", std::string{});
  f.evidence = j.value("evidence", std::string{});
  if (j.contains("span") && j["span"].is_array()) f.span = std::make_pair(j["span"][0].get<std::size_t>(), j["span"][1].get<std::size_t>());
}

bool luhn_valid(const std::string& digits) {
  if (digits.size() < 2) throw ValidationError("digits", "need at least 2 digits");
  int sum = 0;
  bool dbl = false;
  for (auto it = digits.rbegin(); it != digits.rend(); ++it) {
    if (*it < '0' || *it > '9') throw ValidationError("digits", "non-digit character in '" + digits + "'");
    int d = *it - '0';
    if (dbl) {
      d *= 2;
      if (d > 9) d -= 9;
    }
    sum += d;
    dbl = !dbl;
  }
  return sum % 10 == 0;
}

bool cn_id_checksum(const std::string& id) {
  static constexpr int kWeights[17] = {7, 9, 10, 5, 8, 4, 2, 1, 6, 3, 7, 9, 10, 5, 8, 4, 2};
  static constexpr char kCheck[] = "10X98765432";
  if (id.size() != 18) throw ValidationError("id", "expected 18 characters, got " + std::to_string(id.size()));
  int sum = 0;
  for (std::size_t i = 0; i < 17; ++i) {
    if (id[i] < '0' || id[i] > '9') throw ValidationError("id", "body must be 17 digits");
    sum += (id[i] - '0') * kWeights[i];
  }
  const char last = id[17];
  if (!((last >= '0' && last <= '9') || last == 'X')) throw ValidationError("id", "check character must be 0-9 or X");
  return kCheck[sum % 11] == last;
}

// --- rule checkers ----------------------------------------------------------------

std::vector<AuditFinding> PiiRule::check(const DataSample& s) const {
  static const std::regex email(R"([A-Za-z0-9._%+\-]+@[A-Za-z0-9\-]+(\.[A-Za-z0-9\-]+)*\.[A-Za-z]{2,})");
  static const std::regex phone(
      R"((^|[^\d+])((\+\d{1,3}[ \-]?)?(1[3-9]\d{9}|\(?\d{3}\)?[ \-.]\d{3}[ \-.]\d{4}))(?!\d))");
  static const std::regex digits_run(R"((^|[^\dA-Za-z])(\d(?:[ \-]?\d){11,18}|\d{17}[\dX])(?![\dA-Za-z]))");
  std::vector<AuditFinding> out;
  for (const auto& f : fields(s)) {
    std::set<std::pair<std::size_t, std::size_t>> taken;
    for (std::sregex_iterator it(f.text.begin(), f.text.end(), digits_run), end; it != end; ++it) {
      const auto& m = (*it)[2];
      const auto start = static_cast<std::size_t>(m.first - f.text.begin());
      const std::string raw = m.str();
      if (raw.size() == 18 && raw.find_first_of(" -") == std::string::npos && cn_id_checksum(raw)) {
        out.push_back(finding(s, *this, f, start, raw.size(), 0.9, "cn_id " + redact(raw)));
        taken.insert({start, start + raw.size()});
        continue;
      }
      std::string digits;
      for (char c : raw) {
        if (c >= '0' && c <= '9') digits.push_back(c);
      }
      if (digits.size() >= 13 && digits.size() <= 19 && digits.size() == raw.size() - std::count_if(raw.begin(), raw.end(), [](char c) { return c == ' ' || c == '-'; }) &&
          luhn_valid(digits)) {
        out.push_back(finding(s, *this, f, start, raw.size(), 0.9, "bank_card " + redact(digits)));
        taken.insert({start, start + raw.size()});
      }
    }
    for (std::sregex_iterator it(f.text.begin(), f.text.end(), email), end; it != end; ++it) {
      const auto start = static_cast<std::size_t>(it->position(0));
      out.push_back(finding(s, *this, f, start, it->length(0), 0.5, "email " + redact(it->str(0))));
    }
    for (std::sregex_iterator it(f.text.begin(), f.text.end(), phone), end; it != end; ++it) {
      const auto start = static_cast<std::size_t>(it->position(2));
      const auto len = static_cast<std::size_t>(it->length(2));
      const bool inside = std::any_of(taken.begin(), taken.end(),
                                      [&](const auto& t) { return start >= t.first && start + len <= t.second; });
      if (!inside) out.push_back(finding(s, *this, f, start, len, 0.6, "phone " + redact(it->str(2))));
    }
  }
  return out;
}

std::vector<AuditFinding> SecretRule::check(const DataSample& s) const {
  static const std::vector<Pattern> patterns = [] {
    std::vector<Pattern> p;
    p.push_back({"aws_access_key", std::regex(R"(\b(AKIA|ASIA)[0-9A-Z]{16}\b)"), 1.0});
    p.push_back({"aws_secret_key",
                 std::regex(R"(aws_secret_access_key\s*[=:]\s*["']?[A-Za-z0-9/+=]{40})", std::regex::icase), 1.0});
    p.push_back({"github_token", std::regex(R"(\bgh[pousr]_[A-Za-z0-9]{36}\b)"), 1.0});
    p.push_back({"github_pat", std::regex(R"(\bgithub_pat_[A-Za-z0-9_]{60,})"), 1.0});
    p.push_back({"openai_key", std::regex(R"(\bsk-(proj-)?[A-Za-z0-9_\-]{20,})"), 1.0});
    p.push_back({"jwt", std::regex(R"(\beyJ[A-Za-z0-9_\-]{5,}\.eyJ[A-Za-z0-9_\-]{5,}\.[A-Za-z0-9_\-]{5,})"), 0.9});
    p.push_back({"slack_token", std::regex(R"(\bxox[abprs]-[A-Za-z0-9\-]{10,})"), 1.0});
    p.push_back({"google_api_key", std::regex(R"(\bAIza[0-9A-Za-z_\-]{35})"), 1.0});
    p.push_back({"private_key", std::regex(R"(-----BEGIN ([A-Z]+ )?PRIVATE KEY-----)"), 1.0});
    return p;
  }();
  std::vector<AuditFinding> out;
  for (const auto& f : fields(s)) {
    for (const auto& p : patterns) {
      for (std::sregex_iterator it(f.text.begin(), f.text.end(), p.re), end; it != end; ++it) {
        out.push_back(finding(s, *this, f, static_cast<std::size_t>(it->position(0)),
                              static_cast<std::size_t>(it->length(0)), p.severity,
                              std::string(p.kind) + " " + redact(it->str(0))));
      }
    }
  }
  return out;
}

std::vector<LexiconEntry> parse_lexicon(const std::string& text) {
  std::vector<LexiconEntry> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    LexiconEntry e;
    if (auto tab = line.find('\t'); tab != std::string::npos) {
      try {
        e.severity = std::stod(line.substr(tab + 1));
      } catch (const std::exception&) {
        throw ValidationError("lexicon", "bad severity in line '" + line + "'");
      }
      line.erase(tab);
    }
    const auto b = line.find_first_not_of(" \r");
    if (b == std::string::npos) continue;
    e.term = lower(line.substr(b, line.find_last_not_of(" \r") - b + 1));
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<LexiconEntry> load_lexicon(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read lexicon " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_lexicon(buf.str());
}

KeywordRule::KeywordRule(std::string name, RiskType risk, std::vector<LexiconEntry> lexicon)
    : name_(std::move(name)), risk_(risk), lexicon_(std::move(lexicon)) {}

std::vector<AuditFinding> KeywordRule::check(const DataSample& s) const {
  std::vector<AuditFinding> out;
  for (const auto& f : fields(s)) {
    const std::string text = lower(f.text);
    for (const auto& e : lexicon_) {
      for (auto pos = text.find(e.term); pos != std::string::npos; pos = text.find(e.term, pos + 1)) {
        const bool left = pos == 0 || !word_char(text[pos - 1]);
        const auto stop = pos + e.term.size();
        const bool right = stop == text.size() || !word_char(text[stop]);
        if (left && right) {
          out.push_back(finding(s, *this, f, pos, e.term.size(), e.severity, "matched '" + e.term + "'"));
          break;
        }
      }
    }
  }
  return out;
}

std::vector<AuditFinding> BackdoorHeuristic::check_batch(const std::vector<DataSample>& samples) const {
  const std::size_t n = samples.size();
  std::map<std::string, std::vector<std::size_t>> docs;
  for (std::size_t i = 0; i < n; ++i) {
    std::set<std::string> seen;
    std::string w;
    for (char c : samples[i].instruction + " ") {
      if (word_char(c)) {
        w.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
      } else if (!w.empty()) {
        seen.insert(std::move(w));
        w.clear();
      }
    }
    for (const auto& t : seen) docs[t].push_back(i);
  }
  std::map<std::string, std::size_t> response_count;
  for (const auto& s : samples) ++response_count[s.response];

  std::vector<AuditFinding> out;
  std::set<std::size_t> flagged;
  for (const auto& [token, idx] : docs) {
    if (idx.size() < min_support_ || static_cast<double>(idx.size()) > max_doc_fraction_ * static_cast<double>(n)) continue;
    std::map<std::string, std::size_t> local;
    for (auto i : idx) ++local[samples[i].response];
    const auto top = std::max_element(local.begin(), local.end(),
                                      [](const auto& a, const auto& b) { return a.second < b.second; });
    if (top->second < min_support_ || top->second * 5 < idx.size() * 4) continue;
    // the response must be specific to the trigger
    if (response_count[top->first] - top->second > top->second / 4) continue;
    for (auto i : idx) {
      if (samples[i].response != top->first || !flagged.insert(i).second) continue;
      AuditFinding fnd;
      fnd.sample_id = samples[i].id;
      fnd.risk_type = risk_type();
      fnd.checker_name = name();
      fnd.severity = 0.8;
      fnd.field = "instruction";
      fnd.evidence = "token '" + token + "' maps to one fixed response in " + std::to_string(top->second) + " samples";
      out.push_back(std::move(fnd));
    }
  }
  return out;
}

// --- registry ---------------------------------------------------------------------

namespace {

std::unique_ptr<Checker> keyword_factory(const std::string& name, RiskType risk, const std::string& file,
                                         const CheckerSpec& spec, const AuditConfig& config) {
  std::filesystem::path path = config.lexicon_dir / file;
  if (auto it = spec.params.find("lexicon"); it != spec.params.end()) path = it->second;
  return std::make_unique<KeywordRule>(name, risk, load_lexicon(path));
}

}  // namespace

CheckerRegistry::CheckerRegistry() {
  add("PIIRule", [](const CheckerSpec&, const AuditConfig&) { return std::make_unique<PiiRule>(); });
  add("SecretRule", [](const CheckerSpec&, const AuditConfig&) { return std::make_unique<SecretRule>(); });
  const std::vector<std::tuple<const char*, RiskType, const char*>> keyword_rules{
      {"ToxicityKeywordRule", RiskType::toxicity, "toxicity.txt"},
      {"BiasKeywordRule", RiskType::bias, "bias.txt"},
      {"HarmfulContentKeywordRule", RiskType::harmful_content, "harmful_content.txt"},
      {"PromptInjectionKeywordRule", RiskType::prompt_injection, "prompt_injection.txt"},
      {"JailbreakKeywordRule", RiskType::jailbreak, "jailbreak.txt"},
      {"SycophancyKeywordRule", RiskType::sycophancy, "sycophancy.txt"},
  };
  for (const auto& [name, risk, file] : keyword_rules) {
    add(name, [name = std::string(name), risk = risk, file = std::string(file)](const CheckerSpec& spec,
                                                                               const AuditConfig& config) {
      return keyword_factory(name, risk, file, spec, config);
    });
  }
  add("KeywordRule", [](const CheckerSpec& spec, const AuditConfig&) -> std::unique_ptr<Checker> {
    auto risk = spec.params.find("risk_type");
    auto lex = spec.params.find("lexicon");
    if (risk == spec.params.end() || lex == spec.params.end()) {
      throw ConfigError("KeywordRule needs risk_type and lexicon");
    }
    auto label = spec.params.count("label") ? spec.params.at("label") : "KeywordRule:" + risk->second;
    return std::make_unique<KeywordRule>(label, risk_type_from_string(risk->second), load_lexicon(lex->second));
  });
  add("BackdoorHeuristic", [](const CheckerSpec& spec, const AuditConfig&) {
    std::size_t support = 3;
    double fraction = 0.2;
    if (auto it = spec.params.find("min_support"); it != spec.params.end()) support = std::stoul(it->second);
    if (auto it = spec.params.find("max_doc_fraction"); it != spec.params.end()) fraction = std::stod(it->second);
    return std::make_unique<BackdoorHeuristic>(support, fraction);
  });

  const std::string judge = "an LLM judge endpoint";
  const std::string clf = "a trained classifier model";
  add_slot("HarmfulContentLLMJudge", RiskType::harmful_content, judge);
  add_slot("ToxicityLLMJudge", RiskType::toxicity, judge);
  add_slot("BiasLLMJudge", RiskType::bias, judge);
  add_slot("PIILLMJudge", RiskType::pii_leakage, judge);
  add_slot("JailbreakLLMJudge", RiskType::jailbreak, judge);
  add_slot("PromptInjectionLLMJudge", RiskType::prompt_injection, judge);
  add_slot("ContradictionLLMJudge", RiskType::self_contradiction, judge);
  add_slot("InstructionMismatchLLMJudge", RiskType::instruction_mismatch, judge);
  add_slot("FactualConsistencyLLMJudge", RiskType::factual_inconsistency, judge);
  add_slot("SycophancyLLMJudge", RiskType::sycophancy, judge);
  add_slot("DPOLabelFlipLLMJudge", RiskType::label_flipping, judge);
  add_slot("BiasClassifier", RiskType::bias, clf);
  add_slot("ToxicityClassifier", RiskType::toxicity, clf);
  add_slot("HarmfulContentClassifier", RiskType::harmful_content, clf);
  add_slot("PIINERDetector", RiskType::pii_leakage, clf);
  add_slot("JailbreakClassifier", RiskType::jailbreak, clf);
  add_slot("PromptInjectionClassifier", RiskType::prompt_injection, clf);
  add_slot("GraCeFulBackdoorDefender", RiskType::backdoor_injection, "per-sample training gradients");
}

CheckerRegistry& CheckerRegistry::instance() {
  static CheckerRegistry registry;
  return registry;
}

void CheckerRegistry::add(const std::string& name, CheckerFactory factory) { factories_[name] = std::move(factory); }

void CheckerRegistry::add_slot(const std::string& name, RiskType risk, const std::string& requirement) {
  slots_[name] = to_string(risk) + " checker; requires " + requirement;
}

std::unique_ptr<Checker> CheckerRegistry::create(const CheckerSpec& spec, const AuditConfig& config) const {
  if (auto it = factories_.find(spec.name); it != factories_.end()) return it->second(spec, config);
  if (auto it = slots_.find(spec.name); it != slots_.end()) {
    throw ConfigError("checker '" + spec.name + "' is not available offline (" + it->second + ")");
  }
  throw ConfigError("unknown checker '" + spec.name + "'");
}

std::vector<std::string> CheckerRegistry::names() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : factories_) out.push_back(k);
  for (const auto& [k, v] : slots_) out.push_back(k);
  return out;
}

bool CheckerRegistry::available(const std::string& name) const { return factories_.count(name) > 0; }

// --- config -----------------------------------------------------------------------

std::filesystem::path bundled_lexicon_dir() {
  if (const char* env = std::getenv("ROLLFORGE_LEXICON_DIR"); env && *env) return env;
  return ROLLFORGE_DEFAULT_LEXICON_DIR;
}

AuditConfig default_audit_config(const std::filesystem::path& lexicon_dir) {
  AuditConfig c;
  c.lexicon_dir = lexicon_dir;
  for (const char* name : {"PIIRule", "SecretRule", "ToxicityKeywordRule", "BiasKeywordRule", "HarmfulContentKeywordRule",
                           "PromptInjectionKeywordRule", "JailbreakKeywordRule", "SycophancyKeywordRule",
                           "BackdoorHeuristic"}) {
    c.checkers.push_back(CheckerSpec{name, true, {}});
  }
  for (auto r : all_risk_types()) c.weights[r] = 1.0;
  return c;
}

AuditConfig load_audit_config(const std::filesystem::path& path) {
  YAML::Node root;
  try {
    root = YAML::LoadFile(path.string());
  } catch (const YAML::Exception& e) {
    throw ConfigError("cannot parse audit config " + path.string() + ": " + e.what());
  }
  AuditConfig c = default_audit_config();
  try {
    if (root["lexicon_dir"]) {
      std::filesystem::path dir = root["lexicon_dir"].as<std::string>();
      c.lexicon_dir = dir.is_absolute() ? dir : path.parent_path() / dir;
    }
    if (root["threads"]) c.threads = root["threads"].as<std::size_t>();
    if (root["weights"]) {
      for (const auto& kv : root["weights"]) {
        const double w = kv.second.as<double>();
        if (w < 0) throw ConfigError("negative weight for " + kv.first.as<std::string>());
        c.weights[risk_type_from_string(kv.first.as<std::string>())] = w;
      }
    }
    if (root["checkers"]) {
      c.checkers.clear();
      for (const auto& node : root["checkers"]) {
        CheckerSpec spec;
        if (node.IsScalar()) {
          spec.name = node.as<std::string>();
        } else {
          for (const auto& kv : node) {
            const auto key = kv.first.as<std::string>();
            if (key == "name") {
              spec.name = kv.second.as<std::string>();
            } else if (key == "enabled") {
              spec.enabled = kv.second.as<bool>();
            } else {
              spec.params[key] = kv.second.as<std::string>();
            }
          }
        }
        if (spec.name.empty()) throw ConfigError("checker entry without a name in " + path.string());
        if (auto it = spec.params.find("lexicon"); it != spec.params.end()) {
          std::filesystem::path lex = it->second;
          if (lex.is_relative()) it->second = (path.parent_path() / lex).string();
        }
        c.checkers.push_back(std::move(spec));
      }
    }
  } catch (const YAML::Exception& e) {
    throw ConfigError("bad audit config " + path.string() + ": " + e.what());
  } catch (const ValidationError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return c;
}

// --- scoring and reports -------------------------------------------------------------

std::map<RiskType, double> flagged_rates(const std::vector<AuditFinding>& findings, std::size_t total_samples) {
  std::map<RiskType, std::set<std::string>> flagged;
  for (const auto& f : findings) flagged[f.risk_type].insert(f.sample_id);
  std::map<RiskType, double> out;
  for (auto r : all_risk_types()) {
    out[r] = total_samples == 0 ? 0.0 : static_cast<double>(flagged[r].size()) / static_cast<double>(total_samples);
  }
  return out;
}

double safety_score(const std::map<RiskType, double>& rates, const std::map<RiskType, double>& weights) {
  double wsum = 0.0, penalty = 0.0;
  for (const auto& [r, w] : weights) {
    if (w < 0) throw ConfigError("negative weight for " + to_string(r));
    wsum += w;
    auto it = rates.find(r);
    penalty += w * (it == rates.end() ? 0.0 : it->second);
  }
  if (wsum <= 0.0) throw ConfigError("risk weights must not all be zero");
  return std::clamp(100.0 * (1.0 - penalty / wsum), 0.0, 100.0);
}

SafetyReport run_checkers(const Dataset& dataset, const std::vector<std::unique_ptr<Checker>>& checkers,
                          const std::map<RiskType, double>& weights, std::size_t threads) {
  SafetyReport report;
  report.dataset = dataset.name;
  report.total_samples = dataset.samples.size();
  report.weights = weights;
  for (auto r : all_risk_types()) report.weights.emplace(r, 1.0);

  std::vector<const Checker*> sample_checkers, batch_checkers;
  for (const auto& c : checkers) {
    (c->batch() ? batch_checkers : sample_checkers).push_back(c.get());
    report.checkers[c->name()];
  }

  const auto& samples = dataset.samples;
  std::vector<std::vector<AuditFinding>> per_sample(samples.size());
  std::mutex status_mu;
  auto record_failure = [&](const Checker& c, const std::string& what) {
    std::lock_guard lock(status_mu);
    auto& st = report.checkers[c.name()];
    st.status = "partial_success";
    ++st.failures;
    st.last_error = what;
  };

  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, std::max<std::size_t>(1, samples.size()));
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < samples.size(); i = next++) {
      for (const auto* c : sample_checkers) {
        try {
          auto found = c->check(samples[i]);
          per_sample[i].insert(per_sample[i].end(), found.begin(), found.end());
        } catch (const std::exception& e) {
          record_failure(*c, "sample " + samples[i].id + ": " + e.what());
        }
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  for (auto& v : per_sample) {
    for (auto& f : v) report.findings.push_back(std::move(f));
  }
  for (const auto* c : batch_checkers) {
    try {
      auto found = c->check_batch(samples);
      report.findings.insert(report.findings.end(), found.begin(), found.end());
    } catch (const std::exception& e) {
      record_failure(*c, e.what());
    }
  }

  report.flagged_rates = flagged_rates(report.findings, report.total_samples);
  std::map<RiskType, std::set<std::string>> flagged;
  for (const auto& f : report.findings) flagged[f.risk_type].insert(f.sample_id);
  for (auto r : all_risk_types()) report.flagged_counts[r] = flagged[r].size();
  report.safety_score = safety_score(report.flagged_rates, report.weights);
  return report;
}

SafetyReport run_audit(const Dataset& dataset, const AuditConfig& config) {
  std::vector<std::unique_ptr<Checker>> checkers;
  for (const auto& spec : config.checkers) {
    if (spec.enabled) checkers.push_back(CheckerRegistry::instance().create(spec, config));
  }
  return run_checkers(dataset, checkers, config.weights, config.threads);
}

void to_json(json& j, const SafetyReport& r) {
  json rates = json::object(), counts = json::object(), weights = json::object(), checkers = json::object();
  for (const auto& [k, v] : r.flagged_rates) rates[to_string(k)] = v;
  for (const auto& [k, v] : r.flagged_counts) counts[to_string(k)] = v;
  for (const auto& [k, v] : r.weights) weights[to_string(k)] = v;
  for (const auto& [k, v] : r.checkers) {
    checkers[k] = {{"status", v.status}, {"failures", v.failures}, {"last_error", v.last_error}};
  }
  j = json{{"dataset", r.dataset},   {"total_samples", r.total_samples}, {"safety_score", r.safety_score},
           {"flagged_rates", rates}, {"flagged_counts", counts},         {"weights", weights},
           {"checkers", checkers},   {"findings", r.findings}};
}

std::string render_markdown(const SafetyReport& r) {
  std::ostringstream md;
  md << std::fixed << std::setprecision(2);
  md << "# Data audit: " << (r.dataset.empty() ? "dataset" : r.dataset) << "\n\n";
  md << "Samples: " << r.total_samples << "  \n";
  md << "Findings: " << r.findings.size() << "  \n";
  md << "Safety score: **" << r.safety_score << "** / 100\n\n";
  md << "## Risk distribution\n\n";
  md << "| Risk type | Weight | Flagged samples | Rate |\n|---|---:|---:|---:|\n";
  for (auto risk : all_risk_types()) {
    const auto w = r.weights.count(risk) ? r.weights.at(risk) : 0.0;
    const auto n = r.flagged_counts.count(risk) ? r.flagged_counts.at(risk) : 0;
    const auto rate = r.flagged_rates.count(risk) ? r.flagged_rates.at(risk) : 0.0;
    md << "| " << to_string(risk) << " | " << w << " | " << n << " | " << std::setprecision(4) << rate
       << std::setprecision(2) << " |\n";
  }
  md << "\n## Checkers\n\n| Checker | Status | Failures |\n|---|---|---:|\n";
  for (const auto& [name, st] : r.checkers) md << "| " << name << " | " << st.status << " | " << st.failures << " |\n";
  md << "\n## Per-sample findings\n\n";
  if (r.findings.empty()) md << "No findings.\n";
  std::map<std::string, std::vector<const AuditFinding*>> by_sample;
  std::vector<std::string> order;
  for (const auto& f : r.findings) {
    if (!by_sample.count(f.sample_id)) order.push_back(f.sample_id);
    by_sample[f.sample_id].push_back(&f);
  }
  for (const auto& id : order) {
    md << "### " << id << "\n\n";
    for (const auto* f : by_sample[id]) {
      md << "- `" << to_string(f->risk_type) << "` " << f->checker_name << " (severity " << f->severity << ")";
      if (!f->field.empty()) md << " in " << f->field;
      if (f->span) md << " [" << f->span->first << ", " << f->span->second << ")";
      md << ": " << f->evidence << "\n";
    }
    md << "\n";
  }
  return md.str();
}

}  // namespace rollforge::data
