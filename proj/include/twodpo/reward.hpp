#pragma once

#include <array>
#include <span>
#include <string_view>
#include <vector>

#include "twodpo/dataset.hpp"

namespace twodpo {

/// Non-negative per-aspect weights summing to 1 (within 1e-9).
class AspectWeights {
 public:
  /// [0.3, 0.4, 0.1, 0.1, 0.1] over Helpfulness..Clarity.
  static AspectWeights standard();
  /// [1, 0, 0, 0, 0]: helpfulness only.
  static AspectWeights helpfulness_only();
  /// Throws Error(DimensionMismatch) unless exactly five values.
  static AspectWeights from(std::span<const double> values);

  /// Throws Error(InvalidArgument) on negative weights or a sum away from 1.
  explicit AspectWeights(const std::array<double, kNumAspects>& w);

  const std::array<double, kNumAspects>& values() const noexcept { return w_; }
  double operator[](Aspect a) const noexcept { return w_[index_of(a)]; }
  bool operator==(const AspectWeights&) const = default;

 private:
  std::array<double, kNumAspects> w_;
};

using NormalizedRow = std::array<double, kNumAspects>;

/// raw / 4. Throws Error(OutOfRange) outside 0..4.
double normalize_score(int raw);
NormalizedRow normalize_row(const AspectVector& row);
std::vector<NormalizedRow> normalize_matrix(const ScoreMatrix& m);

/// W · vec. Throws Error(DimensionMismatch) if vec does not have five entries
/// and Error(OutOfRange) if an entry lies outside [0, 1].
double weighted_reward(std::span<const double> vec, const AspectWeights& weights);

/// Scalar reward of every segment: normalize, then weight.
std::vector<double> segment_rewards(const ScoreMatrix& m, const AspectWeights& weights);

enum class RejectedRewardMode {
  Raw,       // r used as is
  Inverted,  // 1 - r: the worst rejected segments get the strongest push-down
};

std::string_view to_string(RejectedRewardMode mode) noexcept;
RejectedRewardMode rejected_mode_from_string(std::string_view s);

double rejected_transform(double r, RejectedRewardMode mode) noexcept;

struct SelectedSegment {
  std::size_t segment = 0;
  double reward = 0.0;
  TokenSpan span;
};

struct SegmentPair {
  SelectedSegment chosen;
  SelectedSegment rejected;
};

/// N = min(S_w, S_l) groups; pair i couples the i-th best chosen segment with
/// the i-th worst rejected segment. Ties go to the lower segment index.
struct PairedSelection {
  std::vector<SegmentPair> pairs;

  std::size_t size() const noexcept { return pairs.size(); }
};

/// Throws Error(EmptyResponse) if either list is empty. Spans are left empty.
PairedSelection select_segments(std::span<const double> chosen_rewards,
                                std::span<const double> rejected_rewards);

/// Same selection, with each chosen segment's token span attached.
PairedSelection select_segments(std::span<const double> chosen_rewards,
                                std::span<const TokenSpan> chosen_spans,
                                std::span<const double> rejected_rewards,
                                std::span<const TokenSpan> rejected_spans);

/// beta_target / mean(rewards), so that the batch-mean effective temperature
/// equals beta_target. Throws Error(ZeroMeanReward) for a non-positive mean and
/// Error(EmptyBatch) for an empty list.
double adaptive_beta(std::span<const double> rewards, double beta_target);

/// Response-level score from a normalized matrix: per-aspect mean, mean, min,
/// last, last (Helpfulness..Clarity), then dotted with the weights.
double representative_score(const std::vector<NormalizedRow>& matrix, const AspectWeights& weights);

}  // namespace twodpo
