#include "twodpo/loss.hpp"

#include <cmath>

#include "twodpo/error.hpp"

namespace twodpo {

double neg_log_sigmoid(double x) noexcept {
  // softplus(-x) = max(-x, 0) + log1p(exp(-|x|))
  return std::max(-x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double sigmoid(double x) noexcept {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

namespace {

double sum(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

double span_sum(std::span<const double> v, const TokenSpan& sp) {
  if (sp.end() > v.size()) fail(ErrorCode::InvalidArgument, "token span runs past the response");
  return sum(v.subspan(sp.start, sp.length));
}

void check_tiling(std::span<const TokenSpan> spans, std::size_t tokens, const char* side) {
  std::size_t pos = 0;
  for (const auto& sp : spans) {
    if (sp.start != pos || sp.length == 0)
      fail(ErrorCode::InvalidArgument, std::string(side) + " spans do not tile the response tokens");
    pos = sp.end();
  }
  if (pos != tokens)
    fail(ErrorCode::InvalidArgument, std::string(side) + " spans cover " + std::to_string(pos) +
                                         " of " + std::to_string(tokens) + " tokens");
}

}  // namespace

LossOutput dpo_loss(const TokenLogRatios& ratios, double beta) {
  LossOutput out;
  const double rw = beta * sum(ratios.chosen);
  const double rl = beta * sum(ratios.rejected);
  out.loss = neg_log_sigmoid(rw - rl);
  const double s = sigmoid(rl - rw);
  out.grad_chosen.assign(ratios.chosen.size(), -beta * s);
  out.grad_rejected.assign(ratios.rejected.size(), beta * s);
  out.groups.push_back({rw, rl});
  return out;
}

LossOutput two_d_loss(const TokenLogRatios& ratios, std::span<const TokenSpan> chosen_spans,
                      std::span<const TokenSpan> rejected_spans,
                      std::span<const double> chosen_rewards,
                      std::span<const double> rejected_rewards, double beta) {
  if (chosen_spans.size() != chosen_rewards.size() || rejected_spans.size() != rejected_rewards.size())
    fail(ErrorCode::SpanRewardMismatch, "one reward per segment span is required");
  check_tiling(chosen_spans, ratios.chosen.size(), "chosen");
  check_tiling(rejected_spans, ratios.rejected.size(), "rejected");

  double rw = 0.0, rl = 0.0;
  for (std::size_t k = 0; k < chosen_spans.size(); ++k)
    rw += chosen_rewards[k] * span_sum(ratios.chosen, chosen_spans[k]);
  for (std::size_t k = 0; k < rejected_spans.size(); ++k)
    rl += rejected_rewards[k] * span_sum(ratios.rejected, rejected_spans[k]);
  rw *= beta;
  rl *= beta;

  LossOutput out;
  out.loss = neg_log_sigmoid(rw - rl);
  const double s = sigmoid(rl - rw);
  out.grad_chosen.assign(ratios.chosen.size(), 0.0);
  out.grad_rejected.assign(ratios.rejected.size(), 0.0);
  for (std::size_t k = 0; k < chosen_spans.size(); ++k)
    for (std::size_t t = chosen_spans[k].start; t < chosen_spans[k].end(); ++t)
      out.grad_chosen[t] = -beta * chosen_rewards[k] * s;
  for (std::size_t k = 0; k < rejected_spans.size(); ++k)
    for (std::size_t t = rejected_spans[k].start; t < rejected_spans[k].end(); ++t)
      out.grad_rejected[t] = beta * rejected_rewards[k] * s;
  out.groups.push_back({rw, rl});
  return out;
}

LossOutput grouped_two_d_loss(const PairedSelection& selection, const TokenLogRatios& ratios,
                              double beta) {
  if (selection.pairs.empty()) fail(ErrorCode::EmptySelection, "no segment pairs selected");
  LossOutput out;
  out.grad_chosen.assign(ratios.chosen.size(), 0.0);
  out.grad_rejected.assign(ratios.rejected.size(), 0.0);
  for (const auto& p : selection.pairs) {
    const double rw = beta * (p.chosen.reward * span_sum(ratios.chosen, p.chosen.span));
    const double rl = beta * (p.rejected.reward * span_sum(ratios.rejected, p.rejected.span));
    out.loss += neg_log_sigmoid(rw - rl);
    const double s = sigmoid(rl - rw);
    for (std::size_t t = p.chosen.span.start; t < p.chosen.span.end(); ++t)
      out.grad_chosen[t] += -beta * p.chosen.reward * s;
    for (std::size_t t = p.rejected.span.start; t < p.rejected.span.end(); ++t)
      out.grad_rejected[t] += beta * p.rejected.reward * s;
    out.groups.push_back({rw, rl});
  }
  return out;
}

SftTerm mean_nll(std::span<const double> chosen_log_probs) {
  SftTerm t;
  if (chosen_log_probs.empty()) return t;
  const double n = static_cast<double>(chosen_log_probs.size());
  t.value = -sum(chosen_log_probs) / n;
  t.grad_chosen.assign(chosen_log_probs.size(), -1.0 / n);
  return t;
}

LossOutput combined_loss(const LossOutput& pref, const SftTerm& sft, double coeff) {
  if (coeff < 0) fail(ErrorCode::InvalidArgument, "SFT coefficient must be >= 0");
  LossOutput out = pref;
  if (coeff == 0.0) return out;
  if (sft.grad_chosen.size() != pref.grad_chosen.size())
    fail(ErrorCode::ShapeMismatch, "SFT gradient length differs from chosen tokens");
  out.loss += coeff * sft.value;
  for (std::size_t t = 0; t < out.grad_chosen.size(); ++t) out.grad_chosen[t] += coeff * sft.grad_chosen[t];
  return out;
}

std::vector<double> implicit_token_rewards(std::span<const double> ratios, double beta) {
  std::vector<double> out(ratios.size());
  for (std::size_t t = 0; t < ratios.size(); ++t) out[t] = beta * ratios[t];
  return out;
}

double sequence_reward(std::span<const double> ratios, double beta) { return beta * sum(ratios); }

std::vector<double> token_temperatures(std::span<const TokenSpan> spans,
                                       std::span<const double> rewards, double beta,
                                       std::size_t token_count) {
  if (spans.size() != rewards.size())
    fail(ErrorCode::SpanRewardMismatch, "one reward per span is required");
  std::vector<double> out(token_count, 0.0);
  for (std::size_t k = 0; k < spans.size(); ++k) {
    if (spans[k].end() > token_count) fail(ErrorCode::InvalidArgument, "span runs past the tokens");
    for (std::size_t t = spans[k].start; t < spans[k].end(); ++t) out[t] = beta * rewards[k];
  }
  return out;
}

}  // namespace twodpo
