#pragma once

#include <span>
#include <vector>

#include "twodpo/dataset.hpp"
#include "twodpo/reward.hpp"

namespace twodpo {

/// Per-token log π_θ(a_t|s_t) - log π_ref(a_t|s_t) over the response tokens
/// only (prompt excluded), in nats.
struct TokenLogRatios {
  std::vector<double> chosen;
  std::vector<double> rejected;
};

/// R_w and R_l of one Bradley-Terry group.
struct GroupDiagnostics {
  double chosen_reward = 0.0;
  double rejected_reward = 0.0;
};

struct LossOutput {
  double loss = 0.0;
  std::vector<double> grad_chosen;    // d loss / d l_t, chosen tokens
  std::vector<double> grad_rejected;  // d loss / d l_t, rejected tokens
  std::vector<GroupDiagnostics> groups;
};

/// -log sigmoid(x), evaluated as softplus(-x) without overflow.
double neg_log_sigmoid(double x) noexcept;
double sigmoid(double x) noexcept;

/// Token-level DPO: -log sigmoid(beta * sum l_w - beta * sum l_l).
LossOutput dpo_loss(const TokenLogRatios& ratios, double beta);

/// Segment-weighted DPO. The spans of each response must tile its tokens, one
/// reward per span. Throws Error(SpanRewardMismatch) on a count mismatch and
/// Error(InvalidArgument) if the spans do not tile the tokens.
LossOutput two_d_loss(const TokenLogRatios& ratios, std::span<const TokenSpan> chosen_spans,
                      std::span<const TokenSpan> rejected_spans,
                      std::span<const double> chosen_rewards,
                      std::span<const double> rejected_rewards, double beta);

/// Sum over the selected segment pairs of -log sigmoid(R_w,k - R_l,k). Tokens
/// outside every selected span get exactly zero gradient. Throws
/// Error(EmptySelection) when no pairs are given.
LossOutput grouped_two_d_loss(const PairedSelection& selection, const TokenLogRatios& ratios,
                              double beta);

/// Mean negative log-likelihood of the chosen response and its gradient with
/// respect to each chosen token log-prob (equal to the gradient w.r.t. l_t,
/// since the reference is frozen).
struct SftTerm {
  double value = 0.0;
  std::vector<double> grad_chosen;
};

SftTerm mean_nll(std::span<const double> chosen_log_probs);

/// pref + coeff * sft; gradients add linearly.
LossOutput combined_loss(const LossOutput& pref, const SftTerm& sft, double coeff);

/// beta * l_t per token.
std::vector<double> implicit_token_rewards(std::span<const double> ratios, double beta);

/// beta * sum_t l_t.
double sequence_reward(std::span<const double> ratios, double beta);

/// Per-token effective temperature beta * r_segment(t); zero for tokens not
/// covered by any span.
std::vector<double> token_temperatures(std::span<const TokenSpan> spans,
                                       std::span<const double> rewards, double beta,
                                       std::size_t token_count);

}  // namespace twodpo
