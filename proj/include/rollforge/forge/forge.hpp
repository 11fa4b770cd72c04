#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rollforge/core/model.hpp"

namespace rollforge::forge {

// --- prefix encoding --------------------------------------------------------

struct EncodedTurn {
  core::TokenSeq full_context_tokens;
  std::size_t reused_prefix_len = 0;
  core::TokenSeq fresh_tokens;
};

std::size_t common_prefix(const core::TokenSeq& a, const core::TokenSeq& b);

// Each turn reuses the longest common prefix with the previous turn's context and
// encodes only the remainder.
std::vector<EncodedTurn> prefix_encode(const std::vector<core::TokenSeq>& contexts);

// --- mask painting ----------------------------------------------------------

enum class MaskLayout {
  // Step prompts are fresh segments: stream = p0 o0 p1 o1 ...
  incremental,
  // Step prompts are whole conversation contexts, each extending the previous
  // context and output; shared history is encoded once.
  full_context,
};

struct PaintOptions {
  MaskLayout layout = MaskLayout::incremental;
  // For forked trajectories, leave the steps shared with the parent unmasked so the
  // prefix is trained once across branches.
  bool mask_fork_prefix_once = false;
};

struct PackRef {
  std::string pack_id;
  std::size_t offset = 0;
  std::size_t length = 0;

  bool operator==(const PackRef&) const = default;
};

struct TrainSample {
  core::TokenSeq tokens;
  std::vector<std::uint8_t> loss_mask;
  double advantage = 0.0;
  // Per position; zero where the mask is 0.
  std::vector<double> logprobs_policy;
  std::optional<std::vector<double>> logprobs_teacher;
  // One row per masked position, in order.
  std::optional<core::LogDistSeq> policy_dists;
  std::optional<core::LogDistSeq> teacher_dists;
  bool teacher_missing = false;
  std::string group_id;
  std::string traj_id;
  core::PolicyVersion policy_version;
  std::optional<PackRef> pack;

  bool operator==(const TrainSample&) const = default;
};

void to_json(nlohmann::json& j, const TrainSample& s);
void from_json(const nlohmann::json& j, TrainSample& s);

// Concatenates the trajectory's token stream with mask 1 exactly over output spans.
TrainSample paint_mask(const core::Trajectory& trajectory, const PaintOptions& options = {});

// --- packing ------------------------------------------------------------------

struct Segment {
  std::size_t sample_index = 0;  // position in the input to pack()
  std::string traj_id;
  std::string group_id;
  core::PolicyVersion policy_version;
  double advantage = 0.0;
  std::size_t offset = 0;
  std::size_t length = 0;

  bool operator==(const Segment&) const = default;
};

struct Pack {
  std::string pack_id;
  std::size_t max_len = 0;
  std::vector<Segment> segments;
  std::size_t padding_len = 0;
  core::TokenSeq tokens;                 // max_len entries, padded with pad_token
  std::vector<std::uint8_t> loss_mask;   // padding is 0
  std::vector<double> logprobs_policy;
  std::optional<std::vector<double>> logprobs_teacher;  // when every segment has one

  bool operator==(const Pack&) const = default;
};

void to_json(nlohmann::json& j, const Pack& p);
void from_json(const nlohmann::json& j, Pack& p);

// First-fit-decreasing (stable on ties) without splitting. Fills each sample's pack ref.
std::vector<Pack> pack(std::vector<TrainSample>& samples, std::size_t max_len, const std::string& id_prefix = "pack",
                       core::Token pad_token = 0);
// Inverse of pack(): samples back in their original order (tokens, mask, logprobs, metadata).
std::vector<TrainSample> unpack(const std::vector<Pack>& packs);

// --- objectives ---------------------------------------------------------------

inline constexpr double kAdvantageEpsilon = 1e-6;

// (r - mean) / max(pop_std, eps); all zeros when pop_std < eps.
std::vector<double> grpo_advantage(const std::vector<double>& rewards, double eps = kAdvantageEpsilon);

struct KlResult {
  double value = 0.0;      // nats; +inf when divergent
  bool divergent = false;  // teacher assigns zero mass where the student does not
};

// KL(p_s || p_t) over explicit log-distributions; each must normalize within 1e-6.
KlResult reverse_kl(const std::vector<double>& student, const std::vector<double>& teacher);

struct TokenTerm {
  std::size_t sample = 0;
  std::size_t position = 0;
  double pg = 0.0;  // -a * logp
  double kl = 0.0;  // 0 when the sample has no teacher signal
};

struct LossResult {
  double loss = 0.0;
  double pg_sum = 0.0;
  double kl_sum = 0.0;
  std::size_t masked_tokens = 0;
  std::size_t divergent_tokens = 0;
  std::vector<TokenTerm> per_token;
};

// (sum over masked tokens of -a*logp + kl_weight * reverse KL) / masked token count.
// Samples without teacher signal contribute only the advantage term; kl_weight == 0
// skips the KL computation entirely.
LossResult opd_loss(const std::vector<TrainSample>& batch, double kl_weight);

// One masked token's contribution as a function of the student's logits, and its
// analytic gradient. `teacher` is a log-distribution or null.
double token_loss(const std::vector<double>& logits, core::Token token, double advantage,
                  const std::vector<double>* teacher, double kl_weight, double masked_tokens);
std::vector<double> token_loss_grad(const std::vector<double>& logits, core::Token token, double advantage,
                                    const std::vector<double>* teacher, double kl_weight, double masked_tokens);

// Builds advantage-annotated samples for a whole group (advantages from trajectory returns).
std::vector<TrainSample> build_group_samples(const core::SampleGroup& group, const PaintOptions& options = {});

}  // namespace rollforge::forge
