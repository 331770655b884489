#include "twodpo/reward.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "twodpo/error.hpp"

namespace twodpo {

AspectWeights AspectWeights::standard() { return AspectWeights({0.3, 0.4, 0.1, 0.1, 0.1}); }

AspectWeights AspectWeights::helpfulness_only() { return AspectWeights({1.0, 0.0, 0.0, 0.0, 0.0}); }

AspectWeights AspectWeights::from(std::span<const double> values) {
  if (values.size() != kNumAspects) {
    fail(ErrorCode::DimensionMismatch,
         "expected 5 aspect weights, got " + std::to_string(values.size()));
  }
  std::array<double, kNumAspects> w{};
  std::copy(values.begin(), values.end(), w.begin());
  return AspectWeights(w);
}

AspectWeights::AspectWeights(const std::array<double, kNumAspects>& w) : w_(w) {
  double sum = 0.0;
  for (double x : w_) {
    if (!(x >= 0.0) || !std::isfinite(x)) fail(ErrorCode::InvalidArgument, "aspect weights must be >= 0");
    sum += x;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    fail(ErrorCode::InvalidArgument, "aspect weights must sum to 1, got " + std::to_string(sum));
}

double normalize_score(int raw) {
  if (raw < 0 || raw > kMaxLikert)
    fail(ErrorCode::OutOfRange, "Likert score " + std::to_string(raw) + " outside 0..4");
  return static_cast<double>(raw) / kMaxLikert;
}

NormalizedRow normalize_row(const AspectVector& row) {
  NormalizedRow out{};
  for (std::size_t a = 0; a < kNumAspects; ++a) out[a] = normalize_score(row[a]);
  return out;
}

std::vector<NormalizedRow> normalize_matrix(const ScoreMatrix& m) {
  std::vector<NormalizedRow> out;
  out.reserve(m.rows.size());
  for (const auto& row : m.rows) out.push_back(normalize_row(row));
  return out;
}

double weighted_reward(std::span<const double> vec, const AspectWeights& weights) {
  if (vec.size() != kNumAspects)
    fail(ErrorCode::DimensionMismatch, "expected 5 aspect scores, got " + std::to_string(vec.size()));
  double r = 0.0;
  for (std::size_t a = 0; a < kNumAspects; ++a) {
    if (!(vec[a] >= 0.0 && vec[a] <= 1.0))
      fail(ErrorCode::OutOfRange, "normalized score outside [0, 1]");
    r += weights.values()[a] * vec[a];
  }
  return r;
}

std::vector<double> segment_rewards(const ScoreMatrix& m, const AspectWeights& weights) {
  std::vector<double> out;
  out.reserve(m.rows.size());
  for (const auto& row : m.rows) {
    const NormalizedRow n = normalize_row(row);
    out.push_back(weighted_reward(n, weights));
  }
  return out;
}

std::string_view to_string(RejectedRewardMode mode) noexcept {
  return mode == RejectedRewardMode::Raw ? "raw" : "inverted";
}

RejectedRewardMode rejected_mode_from_string(std::string_view s) {
  if (s == "raw") return RejectedRewardMode::Raw;
  if (s == "inverted") return RejectedRewardMode::Inverted;
  fail(ErrorCode::ConfigError, "rejected reward mode must be raw|inverted, got '" + std::string(s) + "'");
}

double rejected_transform(double r, RejectedRewardMode mode) noexcept {
  return mode == RejectedRewardMode::Raw ? r : 1.0 - r;
}

namespace {

std::vector<std::size_t> ranked(std::span<const double> rewards, bool descending) {
  std::vector<std::size_t> idx(rewards.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return descending ? rewards[a] > rewards[b] : rewards[a] < rewards[b];
  });
  return idx;
}

}  // namespace

PairedSelection select_segments(std::span<const double> chosen_rewards,
                                std::span<const double> rejected_rewards) {
  if (chosen_rewards.empty() || rejected_rewards.empty())
    fail(ErrorCode::EmptyResponse, "segment selection needs segments on both sides");
  const std::size_t n = std::min(chosen_rewards.size(), rejected_rewards.size());
  const auto best = ranked(chosen_rewards, true);
  const auto worst = ranked(rejected_rewards, false);
  PairedSelection sel;
  sel.pairs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    sel.pairs.push_back({{best[i], chosen_rewards[best[i]], {}},
                         {worst[i], rejected_rewards[worst[i]], {}}});
  }
  return sel;
}

PairedSelection select_segments(std::span<const double> chosen_rewards,
                                std::span<const TokenSpan> chosen_spans,
                                std::span<const double> rejected_rewards,
                                std::span<const TokenSpan> rejected_spans) {
  if (chosen_rewards.size() != chosen_spans.size() || rejected_rewards.size() != rejected_spans.size())
    fail(ErrorCode::SpanRewardMismatch, "one reward per token span is required");
  PairedSelection sel = select_segments(chosen_rewards, rejected_rewards);
  for (auto& p : sel.pairs) {
    p.chosen.span = chosen_spans[p.chosen.segment];
    p.rejected.span = rejected_spans[p.rejected.segment];
  }
  return sel;
}

double adaptive_beta(std::span<const double> rewards, double beta_target) {
  if (rewards.empty()) fail(ErrorCode::EmptyBatch, "adaptive beta needs at least one segment reward");
  double sum = 0.0;
  for (double r : rewards) sum += r;
  const double mean = sum / static_cast<double>(rewards.size());
  if (!(mean > 0.0)) fail(ErrorCode::ZeroMeanReward, "mean segment reward is zero");
  return beta_target / mean;
}

double representative_score(const std::vector<NormalizedRow>& matrix, const AspectWeights& weights) {
  if (matrix.empty()) fail(ErrorCode::EmptyResponse, "representative score of an empty matrix");
  NormalizedRow reduced{};
  for (const auto& row : matrix) {
    reduced[index_of(Aspect::Helpfulness)] += row[index_of(Aspect::Helpfulness)];
    reduced[index_of(Aspect::Correctness)] += row[index_of(Aspect::Correctness)];
  }
  const double n = static_cast<double>(matrix.size());
  reduced[index_of(Aspect::Helpfulness)] = std::min(1.0, reduced[index_of(Aspect::Helpfulness)] / n);
  reduced[index_of(Aspect::Correctness)] = std::min(1.0, reduced[index_of(Aspect::Correctness)] / n);
  double safety = matrix.front()[index_of(Aspect::Safety)];
  for (const auto& row : matrix) safety = std::min(safety, row[index_of(Aspect::Safety)]);
  reduced[index_of(Aspect::Safety)] = safety;
  reduced[index_of(Aspect::Completeness)] = matrix.back()[index_of(Aspect::Completeness)];
  reduced[index_of(Aspect::Clarity)] = matrix.back()[index_of(Aspect::Clarity)];
  return weighted_reward(reduced, weights);
}

}  // namespace twodpo
