#pragma once

#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "twodpo/dataset.hpp"
#include "twodpo/loss.hpp"
#include "twodpo/policy.hpp"
#include "twodpo/reward.hpp"

namespace twodpo {

enum class Method { Dpo, OneD, TwoD, TwoDGrouped };

std::string_view to_string(Method m) noexcept;
Method method_from_string(std::string_view s);  // Error(ConfigError)

struct TrainingConfig {
  Method method = Method::TwoD;
  double beta_target = 0.2;
  double sft_coeff = 0.1;
  std::array<double, kNumAspects> weights{0.3, 0.4, 0.1, 0.1, 0.1};
  RejectedRewardMode rejected_mode = RejectedRewardMode::Raw;
  std::size_t steps = 700;
  std::size_t batch_size = 8;
  std::size_t grad_accum = 1;
  std::uint64_t seed = 0;
  double learning_rate = 1e-3;
  std::size_t log_interval = 10;

  std::size_t dim = 32;
  std::size_t hidden = 64;
  std::size_t context = 8;
  std::size_t sft_epochs = 40;
  std::size_t sft_batch_size = 8;
  double sft_learning_rate = 1e-2;

  double temperature = 0.7;
  double top_p = 0.8;
  std::size_t samples = 4;
  std::size_t max_tokens = 64;
  std::size_t rounds = 1;

  std::string data;
  std::string eval_data;
  std::string checkpoint;
  std::string out_dir = ".";

  /// one_d_dpo always uses Helpfulness alone.
  AspectWeights effective_weights() const;
  /// Throws Error(ConfigError) on any out-of-range field.
  void validate() const;

  /// Every field, defaults included.
  nlohmann::json to_json() const;
  /// Missing fields keep their defaults; unknown fields and wrong types are
  /// Error(ConfigError).
  static TrainingConfig from_json(const nlohmann::json& j);
  static TrainingConfig load(const std::string& path);
};

/// Prompt text fed to the policy ahead of a response.
std::string prompt_text(const std::vector<Utterance>& history);

/// Vocabulary over prompts and both responses of every pair.
Vocab build_vocab(const std::vector<PreferencePair>& pairs);

/// (prompt, chosen) examples for supervised fine-tuning.
std::vector<SftExample> sft_corpus(const std::vector<PreferencePair>& pairs, const Vocab& vocab);
SftConfig sft_config(const TrainingConfig& cfg, std::size_t vocab_size);

struct PreparedResponse {
  std::vector<TokenId> ids;
  std::vector<TokenSpan> spans;        // one per non-empty segment group
  std::vector<std::size_t> segment_of_span;
  std::vector<double> rewards;         // weighted reward per span, before any transform
  std::vector<double> loss_rewards;    // rewards as they enter the loss
};

struct PreparedPair {
  std::string id;
  std::vector<TokenId> prompt;
  PreparedResponse chosen;
  PreparedResponse rejected;
  PairedSelection selection;  // grouped mode only; rejected rewards transformed
  FrozenPolicy ref_owner;
  std::shared_ptr<const SequenceTrace> ref_chosen;
  std::shared_ptr<const SequenceTrace> ref_rejected;
};

/// Tokenizes, aligns segments to tokens, computes rewards and caches the
/// reference forward passes. Failures are reported as Error(DataError).
PreparedPair prepare_pair(const PreferencePair& pair, const Vocab& vocab, const TrainingConfig& cfg,
                          const FrozenPolicy& ref);
std::vector<PreparedPair> prepare_dataset(const std::vector<PreferencePair>& pairs, const Vocab& vocab,
                                          const TrainingConfig& cfg, const FrozenPolicy& ref);

/// Temperature used for a batch: beta_target for dpo, otherwise adaptive over
/// the segment rewards that enter the loss.
double batch_beta(const TrainingConfig& cfg, std::span<const PreparedPair* const> batch);

/// Preference loss (plus SFT term) of one pair given its token log-ratios and
/// chosen log-probs.
LossOutput pair_loss(const TrainingConfig& cfg, const PreparedPair& pair, const TokenLogRatios& ratios,
                     std::span<const double> chosen_log_probs, double beta);

struct BatchResult {
  double loss = 0.0;  // mean over pairs
  double beta = 0.0;
};

/// Mean loss over the batch; if `grads` is given, adds d loss / d params.
BatchResult batch_objective(const TrainingConfig& cfg, const PolicyParams& theta,
                            std::span<const PreparedPair* const> batch, PolicyParams* grads);

struct MetricsRecord {
  std::size_t step = 0;
  double loss = 0.0;
  double chosen_reward = 0.0;
  double rejected_reward = 0.0;
  double margin = 0.0;
  double accuracy = 0.0;
  double kl_chosen = 0.0;
  double kl_rejected = 0.0;
};

inline constexpr std::string_view kMetricsHeader =
    "step,loss,chosen_reward,rejected_reward,margin,accuracy,kl_chosen,kl_rejected";
std::string to_csv_row(const MetricsRecord& r);

/// Fraction of groups whose chosen reward is strictly larger. Throws
/// Error(EmptyBatch) for no groups.
double reward_accuracy(std::span<const GroupDiagnostics> groups);

/// Mean sequence rewards (beta_target * sum of log-ratios), accuracy and
/// sequential KL over the prepared pairs.
MetricsRecord measure(const TrainingConfig& cfg, const PolicyParams& theta,
                      const std::vector<PreparedPair>& pairs);

struct TrainResult {
  PolicyParams params;
  std::vector<MetricsRecord> metrics;
  std::vector<double> step_losses;
};

using MetricsCallback = std::function<void(const MetricsRecord&)>;

/// Preference optimization from `init` against the frozen `ref`. Records are
/// taken after the first update, every log_interval updates and after the
/// last one. Throws Error(NonFiniteLoss) as soon as a batch loss is not finite.
TrainResult train(const TrainingConfig& cfg, const std::vector<PreferencePair>& data, const Vocab& vocab,
                  const PolicyParams& init, const FrozenPolicy& ref, const MetricsCallback& on_record = {});

/// Spearman rank correlation with average ranks for ties; NaN when either
/// side has zero variance.
double spearman(std::span<const double> x, std::span<const double> y);

struct SegmentReport {
  std::size_t segment = 0;
  TokenSpan span;
  double mean_implicit_reward = 0.0;
  double annotated_reward = 0.0;
};

struct PairReport {
  std::string id;
  double chosen_reward = 0.0;
  double rejected_reward = 0.0;
  double kl_chosen = 0.0;
  double kl_rejected = 0.0;
  std::vector<SegmentReport> chosen_segments;
  std::vector<SegmentReport> rejected_segments;
};

struct EvaluationReport {
  std::vector<PairReport> pairs;
  double accuracy = 0.0;
  double mean_margin = 0.0;
  double mean_kl_chosen = 0.0;
  double mean_kl_rejected = 0.0;
  double spearman = 0.0;  // chosen segments; NaN when undefined
  bool spearman_defined = false;

  nlohmann::json to_json() const;
};

/// Throws Error(DataError) for an empty or untokenizable dataset.
EvaluationReport evaluate(const TrainingConfig& cfg, const PolicyParams& theta, const FrozenPolicy& ref,
                          const std::vector<PreferencePair>& data, const Vocab& vocab);

class Scorer {
 public:
  virtual ~Scorer() = default;
  /// One row per segment.
  virtual ScoreMatrix score(const std::vector<Utterance>& history, const std::vector<Segment>& segments) = 0;
};

struct IterationRound {
  std::size_t index = 0;
  std::vector<std::vector<Utterance>> instructions;
  std::size_t samples = 4;
  Scorer* scorer = nullptr;
};

/// (best, worst) by score; ties go to the earlier index.
std::pair<std::size_t, std::size_t> pick_best_worst(std::span<const double> scores);

struct RoundResult {
  std::vector<PreferencePair> dataset;
  std::size_t skipped = 0;  // instructions whose samples could not form a pair
  TrainResult training;
};

/// Samples, scores and pairs responses per instruction, then trains on the new
/// pairs from `params`. Instructions whose samples are all identical are
/// skipped; Error(DegenerateRound) if that leaves nothing. A scorer exception
/// or a malformed matrix is Error(ScorerFailure).
RoundResult iterate_round(const PolicyParams& params, const FrozenPolicy& ref, const IterationRound& round,
                          const TrainingConfig& cfg, const Vocab& vocab);

}  // namespace twodpo
