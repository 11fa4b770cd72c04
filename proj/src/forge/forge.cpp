#include "rollforge/forge/forge.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace rollforge::forge {

using nlohmann::json;

std::size_t common_prefix(const core::TokenSeq& a, const core::TokenSeq& b) {
  const auto n = std::min(a.size(), b.size());
  std::size_t i = 0;
  while (i < n && a[i] == b[i]) ++i;
  return i;
}

std::vector<EncodedTurn> prefix_encode(const std::vector<core::TokenSeq>& contexts) {
  std::vector<EncodedTurn> out;
  out.reserve(contexts.size());
  const core::TokenSeq empty;
  for (const auto& ctx : contexts) {
    const auto& prev = out.empty() ? empty : out.back().full_context_tokens;
    EncodedTurn turn;
    turn.reused_prefix_len = common_prefix(prev, ctx);
    turn.fresh_tokens.assign(ctx.begin() + static_cast<std::ptrdiff_t>(turn.reused_prefix_len), ctx.end());
    turn.full_context_tokens = ctx;
    out.push_back(std::move(turn));
  }
  return out;
}

void to_json(json& j, const TrainSample& s) {
  j = {{"tokens", s.tokens},
       {"loss_mask", s.loss_mask},
       {"advantage", s.advantage},
       {"logprobs_policy", s.logprobs_policy},
       {"teacher_missing", s.teacher_missing},
       {"group_id", s.group_id},
       {"traj_id", s.traj_id},
       {"policy_version", s.policy_version.value}};
  if (s.logprobs_teacher) j["logprobs_teacher"] = *s.logprobs_teacher;
  if (s.policy_dists) j["policy_dists"] = *s.policy_dists;
  if (s.teacher_dists) j["teacher_dists"] = *s.teacher_dists;
  if (s.pack) j["pack_metadata"] = {{"pack_id", s.pack->pack_id}, {"offset", s.pack->offset}, {"length", s.pack->length}};
}

void from_json(const json& j, TrainSample& s) {
  s.tokens = j.at("tokens").get<core::TokenSeq>();
  s.loss_mask = j.at("loss_mask").get<std::vector<std::uint8_t>>();
  s.advantage = j.at("advantage").get<double>();
  s.logprobs_policy = j.at("logprobs_policy").get<std::vector<double>>();
  s.teacher_missing = j.value("teacher_missing", false);
  s.group_id = j.value("group_id", std::string{});
  s.traj_id = j.value("traj_id", std::string{});
  s.policy_version = core::PolicyVersion{j.value("policy_version", std::uint64_t{0})};
  s.logprobs_teacher = j.contains("logprobs_teacher") ? std::optional(j["logprobs_teacher"].get<std::vector<double>>()) : std::nullopt;
  s.policy_dists = j.contains("policy_dists") ? std::optional(j["policy_dists"].get<core::LogDistSeq>()) : std::nullopt;
  s.teacher_dists = j.contains("teacher_dists") ? std::optional(j["teacher_dists"].get<core::LogDistSeq>()) : std::nullopt;
  if (j.contains("pack_metadata")) {
    const auto& m = j["pack_metadata"];
    s.pack = PackRef{m.at("pack_id").get<std::string>(), m.at("offset").get<std::size_t>(), m.at("length").get<std::size_t>()};
  }
}

TrainSample paint_mask(const core::Trajectory& t, const PaintOptions& options) {
  core::validate(t);
  TrainSample s;
  s.group_id = t.group_id;
  s.traj_id = t.traj_id;
  s.policy_version = t.policy_version;

  bool any_teacher = false, all_teacher = true, all_dists = true, all_teacher_dists = true;
  for (const auto& step : t.steps) {
    if (step.output_tokens.empty()) continue;
    any_teacher = any_teacher || step.teacher_logprobs.has_value();
    all_teacher = all_teacher && step.teacher_logprobs.has_value();
    all_dists = all_dists && step.output_dists.has_value();
    all_teacher_dists = all_teacher_dists && step.teacher_dists.has_value();
  }
  const bool use_teacher = any_teacher && all_teacher;
  s.teacher_missing = any_teacher && !all_teacher;
  std::vector<double> teacher;
  core::LogDistSeq pdists, tdists;

  const std::int64_t shared_steps =
      options.mask_fork_prefix_once && t.fork ? t.fork->prefix_steps : std::int64_t{0};

  auto append_unmasked = [&](auto begin, auto end) {
    for (auto it = begin; it != end; ++it) {
      s.tokens.push_back(*it);
      s.loss_mask.push_back(0);
      s.logprobs_policy.push_back(0.0);
      teacher.push_back(0.0);
    }
  };

  for (std::size_t k = 0; k < t.steps.size(); ++k) {
    const auto& step = t.steps[k];
    if (options.layout == MaskLayout::incremental || k == 0) {
      append_unmasked(step.prompt_tokens.begin(), step.prompt_tokens.end());
    } else {
      const auto reuse = common_prefix(s.tokens, step.prompt_tokens);
      if (reuse < s.tokens.size()) {
        const auto first_masked = std::find(s.loss_mask.begin() + static_cast<std::ptrdiff_t>(reuse), s.loss_mask.end(), 1);
        if (first_masked != s.loss_mask.end()) {
          throw ValidationError("steps", "overlapping spans: step " + std::to_string(k) +
                                             " context rewrites model output at position " +
                                             std::to_string(first_masked - s.loss_mask.begin()));
        }
        throw ValidationError("prompt_tokens", "step " + std::to_string(k) + " context does not extend the previous one");
      }
      append_unmasked(step.prompt_tokens.begin() + static_cast<std::ptrdiff_t>(reuse), step.prompt_tokens.end());
    }
    const bool train = static_cast<std::int64_t>(k) >= shared_steps;
    for (std::size_t i = 0; i < step.output_tokens.size(); ++i) {
      s.tokens.push_back(step.output_tokens[i]);
      s.loss_mask.push_back(train ? 1 : 0);
      s.logprobs_policy.push_back(train ? step.output_logprobs[i] : 0.0);
      teacher.push_back(train && use_teacher ? (*step.teacher_logprobs)[i] : 0.0);
      if (train && all_dists) pdists.push_back((*step.output_dists)[i]);
      if (train && use_teacher && all_teacher_dists) tdists.push_back((*step.teacher_dists)[i]);
    }
  }
  if (use_teacher) s.logprobs_teacher = std::move(teacher);
  if (all_dists) s.policy_dists = std::move(pdists);
  if (use_teacher && all_teacher_dists) s.teacher_dists = std::move(tdists);
  return s;
}

// --- packing --------------------------------------------------------------------

void to_json(json& j, const Segment& s) {
  j = {{"sample_index", s.sample_index}, {"traj_id", s.traj_id},   {"group_id", s.group_id},
       {"policy_version", s.policy_version.value}, {"advantage", s.advantage}, {"offset", s.offset},
       {"length", s.length}};
}

void from_json(const json& j, Segment& s) {
  s.sample_index = j.at("sample_index").get<std::size_t>();
  s.traj_id = j.at("traj_id").get<std::string>();
  s.group_id = j.at("group_id").get<std::string>();
  s.policy_version = core::PolicyVersion{j.at("policy_version").get<std::uint64_t>()};
  s.advantage = j.at("advantage").get<double>();
  s.offset = j.at("offset").get<std::size_t>();
  s.length = j.at("length").get<std::size_t>();
}

void to_json(json& j, const Pack& p) {
  j = {{"pack_id", p.pack_id},   {"max_len", p.max_len},     {"segments", p.segments},
       {"padding_len", p.padding_len}, {"tokens", p.tokens}, {"loss_mask", p.loss_mask},
       {"logprobs_policy", p.logprobs_policy}};
  if (p.logprobs_teacher) j["logprobs_teacher"] = *p.logprobs_teacher;
}

void from_json(const json& j, Pack& p) {
  p.pack_id = j.at("pack_id").get<std::string>();
  p.max_len = j.at("max_len").get<std::size_t>();
  p.segments = j.at("segments").get<std::vector<Segment>>();
  p.padding_len = j.at("padding_len").get<std::size_t>();
  p.tokens = j.at("tokens").get<core::TokenSeq>();
  p.loss_mask = j.at("loss_mask").get<std::vector<std::uint8_t>>();
  p.logprobs_policy = j.at("logprobs_policy").get<std::vector<double>>();
  p.logprobs_teacher =
      j.contains("logprobs_teacher") ? std::optional(j["logprobs_teacher"].get<std::vector<double>>()) : std::nullopt;
}

std::vector<Pack> pack(std::vector<TrainSample>& samples, std::size_t max_len, const std::string& id_prefix,
                       core::Token pad_token) {
  if (max_len == 0) throw ValidationError("max_len", "must be positive");
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto n = samples[i].tokens.size();
    if (samples[i].loss_mask.size() != n || samples[i].logprobs_policy.size() != n) {
      throw ValidationError("samples[" + std::to_string(i) + "]", "mask/logprob length mismatch");
    }
    if (n > max_len) {
      throw ValidationError("samples[" + std::to_string(i) + "]",
                            "length " + std::to_string(n) + " exceeds max_len " + std::to_string(max_len));
    }
  }
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return samples[a].tokens.size() > samples[b].tokens.size(); });

  std::vector<Pack> packs;
  std::vector<std::size_t> used;
  for (std::size_t idx : order) {
    const auto len = samples[idx].tokens.size();
    std::size_t p = 0;
    while (p < packs.size() && used[p] + len > max_len) ++p;
    if (p == packs.size()) {
      Pack fresh;
      fresh.pack_id = id_prefix + "-" + std::to_string(packs.size());
      fresh.max_len = max_len;
      packs.push_back(std::move(fresh));
      used.push_back(0);
    }
    auto& pk = packs[p];
    const auto& s = samples[idx];
    pk.segments.push_back({idx, s.traj_id, s.group_id, s.policy_version, s.advantage, used[p], len});
    pk.tokens.insert(pk.tokens.end(), s.tokens.begin(), s.tokens.end());
    pk.loss_mask.insert(pk.loss_mask.end(), s.loss_mask.begin(), s.loss_mask.end());
    pk.logprobs_policy.insert(pk.logprobs_policy.end(), s.logprobs_policy.begin(), s.logprobs_policy.end());
    samples[idx].pack = PackRef{pk.pack_id, used[p], len};
    used[p] += len;
  }
  for (std::size_t p = 0; p < packs.size(); ++p) {
    auto& pk = packs[p];
    pk.padding_len = max_len - used[p];
    bool all_teacher = true;
    for (const auto& seg : pk.segments) all_teacher = all_teacher && samples[seg.sample_index].logprobs_teacher.has_value();
    if (all_teacher) {
      std::vector<double> lt;
      for (const auto& seg : pk.segments) {
        const auto& src = *samples[seg.sample_index].logprobs_teacher;
        lt.insert(lt.end(), src.begin(), src.end());
      }
      lt.resize(max_len, 0.0);
      pk.logprobs_teacher = std::move(lt);
    }
    pk.tokens.resize(max_len, pad_token);
    pk.loss_mask.resize(max_len, 0);
    pk.logprobs_policy.resize(max_len, 0.0);
  }
  return packs;
}

std::vector<TrainSample> unpack(const std::vector<Pack>& packs) {
  std::size_t total = 0;
  for (const auto& p : packs) total += p.segments.size();
  std::vector<TrainSample> out(total);
  std::vector<bool> filled(total, false);
  for (const auto& p : packs) {
    for (const auto& seg : p.segments) {
      if (seg.sample_index >= total || filled[seg.sample_index]) {
        throw ValidationError("segments", "pack " + p.pack_id + " has a bad sample index");
      }
      if (seg.offset + seg.length > p.max_len) throw ValidationError("segments", "segment overruns pack " + p.pack_id);
      auto& s = out[seg.sample_index];
      const auto b = static_cast<std::ptrdiff_t>(seg.offset);
      const auto e = static_cast<std::ptrdiff_t>(seg.offset + seg.length);
      s.tokens.assign(p.tokens.begin() + b, p.tokens.begin() + e);
      s.loss_mask.assign(p.loss_mask.begin() + b, p.loss_mask.begin() + e);
      s.logprobs_policy.assign(p.logprobs_policy.begin() + b, p.logprobs_policy.begin() + e);
      if (p.logprobs_teacher) s.logprobs_teacher.emplace(p.logprobs_teacher->begin() + b, p.logprobs_teacher->begin() + e);
      s.advantage = seg.advantage;
      s.traj_id = seg.traj_id;
      s.group_id = seg.group_id;
      s.policy_version = seg.policy_version;
      s.pack = PackRef{p.pack_id, seg.offset, seg.length};
      filled[seg.sample_index] = true;
    }
  }
  return out;
}

// --- objectives -------------------------------------------------------------------

std::vector<double> grpo_advantage(const std::vector<double>& rewards, double eps) {
  if (rewards.size() < 2) throw ValidationError("rewards", "group-relative advantage needs at least two rewards");
  const double n = static_cast<double>(rewards.size());
  const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double sd = std::sqrt(var / n);
  std::vector<double> out(rewards.size(), 0.0);
  if (sd < eps) return out;
  for (std::size_t i = 0; i < rewards.size(); ++i) out[i] = (rewards[i] - mean) / sd;
  return out;
}

namespace {

void check_normalized(const std::vector<double>& lp, const char* field) {
  if (lp.empty()) throw ValidationError(field, "empty distribution");
  double mass = 0.0;
  for (double l : lp) {
    if (std::isnan(l) || l > 0.0) throw ValidationError(field, "log-probabilities must be <= 0");
    mass += std::exp(l);
  }
  if (std::abs(mass - 1.0) > 1e-6) throw ValidationError(field, "does not normalize (mass " + std::to_string(mass) + ")");
}

}  // namespace

KlResult reverse_kl(const std::vector<double>& student, const std::vector<double>& teacher) {
  if (student.size() != teacher.size()) throw ValidationError("teacher", "support size differs from student");
  check_normalized(student, "student");
  check_normalized(teacher, "teacher");
  KlResult r;
  double sum = 0.0;
  for (std::size_t i = 0; i < student.size(); ++i) {
    if (std::isinf(student[i])) continue;  // zero student mass contributes nothing
    if (std::isinf(teacher[i])) {
      r.divergent = true;
      continue;
    }
    sum += std::exp(student[i]) * (student[i] - teacher[i]);
  }
  r.value = r.divergent ? std::numeric_limits<double>::infinity() : std::max(sum, 0.0);
  return r;
}

LossResult opd_loss(const std::vector<TrainSample>& batch, double kl_weight) {
  if (!(kl_weight >= 0.0)) throw ValidationError("kl_weight", "must be non-negative");
  LossResult out;
  for (std::size_t si = 0; si < batch.size(); ++si) {
    const auto& s = batch[si];
    const auto n = s.tokens.size();
    if (s.loss_mask.size() != n || s.logprobs_policy.size() != n) {
      throw ValidationError("batch[" + std::to_string(si) + "]", "mask/logprob length mismatch");
    }
    const bool has_teacher = !s.teacher_missing && s.logprobs_teacher.has_value();
    if (has_teacher && s.logprobs_teacher->size() != n) {
      throw ValidationError("batch[" + std::to_string(si) + "]", "teacher logprob length mismatch");
    }
    const bool exact = has_teacher && s.policy_dists && s.teacher_dists;
    std::size_t row = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!s.loss_mask[i]) continue;
      TokenTerm term{si, i, -s.advantage * s.logprobs_policy[i], 0.0};
      if (kl_weight != 0.0 && has_teacher) {
        if (exact) {
          if (row >= s.policy_dists->size() || row >= s.teacher_dists->size()) {
            throw ValidationError("batch[" + std::to_string(si) + "]", "fewer distributions than masked tokens");
          }
          const auto kl = reverse_kl((*s.policy_dists)[row], (*s.teacher_dists)[row]);
          if (kl.divergent) ++out.divergent_tokens;
          term.kl = kl.value;
        } else {
          // Single-sample estimate at the sampled token when full distributions are absent.
          term.kl = s.logprobs_policy[i] - (*s.logprobs_teacher)[i];
        }
      }
      ++row;
      out.pg_sum += term.pg;
      out.kl_sum += term.kl;
      out.per_token.push_back(term);
    }
    out.masked_tokens += row;
  }
  if (out.masked_tokens == 0) return out;
  const double m = static_cast<double>(out.masked_tokens);
  out.loss = kl_weight == 0.0 ? out.pg_sum / m : (out.pg_sum + kl_weight * out.kl_sum) / m;
  return out;
}

namespace {

std::vector<double> log_softmax_of(const std::vector<double>& logits) {
  const double top = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z - top);
  const double lse = top + std::log(sum);
  std::vector<double> out(logits.size());
  for (std::size_t k = 0; k < logits.size(); ++k) out[k] = logits[k] - lse;
  return out;
}

}  // namespace

double token_loss(const std::vector<double>& logits, core::Token token, double advantage,
                  const std::vector<double>* teacher, double kl_weight, double masked_tokens) {
  const auto lp = log_softmax_of(logits);
  double value = -advantage * lp.at(static_cast<std::size_t>(token));
  if (teacher != nullptr && kl_weight != 0.0) value += kl_weight * reverse_kl(lp, *teacher).value;
  return value / masked_tokens;
}

std::vector<double> token_loss_grad(const std::vector<double>& logits, core::Token token, double advantage,
                                    const std::vector<double>* teacher, double kl_weight, double masked_tokens) {
  const auto lp = log_softmax_of(logits);
  const auto x = static_cast<std::size_t>(token);
  std::vector<double> g(lp.size());
  double kl = 0.0;
  if (teacher != nullptr && kl_weight != 0.0) kl = reverse_kl(lp, *teacher).value;
  for (std::size_t k = 0; k < lp.size(); ++k) {
    const double p = std::exp(lp[k]);
    g[k] = -advantage * ((k == x ? 1.0 : 0.0) - p);
    if (teacher != nullptr && kl_weight != 0.0) g[k] += kl_weight * p * (lp[k] - (*teacher)[k] - kl);
    g[k] /= masked_tokens;
  }
  return g;
}

std::vector<TrainSample> build_group_samples(const core::SampleGroup& group, const PaintOptions& options) {
  std::vector<double> returns;
  for (const auto& t : group.trajectories) returns.push_back(core::trajectory_return(t));
  const auto adv = returns.size() >= 2 ? grpo_advantage(returns) : std::vector<double>(returns.size(), 0.0);
  std::vector<TrainSample> out;
  for (std::size_t i = 0; i < group.trajectories.size(); ++i) {
    auto s = paint_mask(group.trajectories[i], options);
    s.advantage = adv[i];
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace rollforge::forge
