#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "twodpo/tokenizer.hpp"

namespace twodpo {

struct PolicyShape {
  std::size_t vocab = 0;
  std::size_t dim = 32;
  std::size_t context = 8;
  std::size_t hidden = 64;

  std::size_t parameter_count() const noexcept;
  bool operator==(const PolicyShape&) const = default;
};

/// Fixed-window MLP language model. All weights live in one flat row-major
/// buffer, in this order:
///   embedding  V x d
///   w1         h x (C*d)   z = tanh(w1 * [E(x_{t-C}) .. E(x_{t-1})] + b1)
///   b1         h
///   w2         d x h       o = w2 * z + b2
///   b2         d
///   out        V x d       logits = out * o + out_bias
///   out_bias   V
class PolicyParams {
 public:
  PolicyParams() = default;
  /// All zeros; the output distribution is uniform.
  explicit PolicyParams(const PolicyShape& shape);

  /// Gaussian hidden weights scaled by fan-in, zero output layer.
  static PolicyParams initialize(const PolicyShape& shape, std::uint64_t seed);

  const PolicyShape& shape() const noexcept { return shape_; }
  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }

  std::span<double> embedding() noexcept;
  std::span<double> w1() noexcept;
  std::span<double> b1() noexcept;
  std::span<double> w2() noexcept;
  std::span<double> b2() noexcept;
  std::span<double> out() noexcept;
  std::span<double> out_bias() noexcept;
  std::span<const double> embedding() const noexcept;
  std::span<const double> w1() const noexcept;
  std::span<const double> b1() const noexcept;
  std::span<const double> w2() const noexcept;
  std::span<const double> b2() const noexcept;
  std::span<const double> out() const noexcept;
  std::span<const double> out_bias() const noexcept;

  bool finite() const noexcept;
  /// FNV-1a over the shape and raw parameter bytes.
  std::uint64_t hash() const noexcept;

  bool operator==(const PolicyParams&) const = default;

 private:
  std::span<double> block(std::size_t offset, std::size_t n) noexcept { return {values_.data() + offset, n}; }
  std::span<const double> block(std::size_t offset, std::size_t n) const noexcept {
    return {values_.data() + offset, n};
  }

  PolicyShape shape_;
  std::vector<double> values_;
};

using FrozenPolicy = std::shared_ptr<const PolicyParams>;

/// Deep copy that nothing can write to.
FrozenPolicy clone_reference(const PolicyParams& params);

/// Log-probabilities of the next token given the last C tokens of `context`
/// (left-padded with end-of-sequence). Throws Error(UnknownToken) for ids
/// outside the vocabulary.
std::vector<double> token_log_probs(const PolicyParams& params, std::span<const TokenId> context);

/// Forward activations for every response position, kept for backprop.
class SequenceTrace {
 public:
  std::size_t length() const noexcept { return targets_.size(); }
  std::span<const TokenId> targets() const noexcept { return targets_; }
  std::span<const double> log_probs(std::size_t t) const noexcept;
  double target_log_prob(std::size_t t) const noexcept { return log_probs(t)[static_cast<std::size_t>(targets_[t])]; }
  std::vector<double> target_log_probs() const;

 private:
  friend SequenceTrace trace_response(const PolicyParams&, std::span<const TokenId>, std::span<const TokenId>);
  friend void accumulate_gradient(const PolicyParams&, const SequenceTrace&, std::span<const double>,
                                  PolicyParams&);

  PolicyShape shape_;
  std::vector<TokenId> targets_;
  std::vector<TokenId> windows_;  // length x C
  std::vector<double> hidden_;    // length x h, post-tanh
  std::vector<double> output_;    // length x d
  std::vector<double> logp_;      // length x V
};

/// Runs the policy over `prompt` followed by `response`, scoring the response
/// tokens only.
SequenceTrace trace_response(const PolicyParams& params, std::span<const TokenId> prompt,
                             std::span<const TokenId> response);

/// grads += d loss / d params, given d loss / d log pi(response_t) per
/// response position.
void accumulate_gradient(const PolicyParams& params, const SequenceTrace& trace,
                         std::span<const double> dloss_dlogp, PolicyParams& grads);

/// log pi_theta(a_t|s_t) - log pi_ref(a_t|s_t) for each response token.
/// Throws Error(EmptyResponse) for an empty response.
std::vector<double> response_log_ratios(const PolicyParams& theta, const PolicyParams& ref,
                                        std::span<const TokenId> prompt, std::span<const TokenId> response);

/// KL(p || q) of two full log-prob vectors.
double kl_divergence(std::span<const double> logp, std::span<const double> logq);

/// Sum over response positions of KL(pi_theta(.|s_t) || pi_ref(.|s_t)).
double sequential_kl(const SequenceTrace& theta, const SequenceTrace& ref);
double sequential_kl(const PolicyParams& theta, const PolicyParams& ref, std::span<const TokenId> prompt,
                     std::span<const TokenId> response);

struct SamplingConfig {
  double temperature = 0.7;
  double top_p = 0.8;
  std::size_t max_tokens = 64;
};

/// Token ids of the smallest set of most likely tokens whose probability
/// reaches top_p, in descending probability order (ties by lower id).
std::vector<TokenId> nucleus(std::span<const double> probs, double top_p);

/// Autoregressive nucleus sampling; stops at end-of-sequence (not included)
/// or max_tokens. Throws Error(InvalidArgument) unless temperature > 0 and
/// 0 < top_p <= 1.
std::vector<TokenId> sample_tokens(const PolicyParams& params, std::span<const TokenId> prompt,
                                   const SamplingConfig& cfg, std::uint64_t seed);
std::string sample(const PolicyParams& params, const Vocab& vocab, std::string_view prompt,
                   const SamplingConfig& cfg, std::uint64_t seed);

/// Binary checkpoint: "TDPOCKPT", u32 version (1), u32 V, d, C, h,
/// u64 parameter count, then the parameters as little-endian fp64 in the
/// layout above.
void save_checkpoint(const PolicyParams& params, const std::string& path);
PolicyParams load_checkpoint(const std::string& path);

struct SftExample {
  std::vector<TokenId> prompt;
  std::vector<TokenId> response;  // end-of-sequence is appended during training
};

struct SftConfig {
  PolicyShape shape;
  std::size_t epochs = 40;
  std::size_t batch_size = 8;
  double learning_rate = 1e-2;
  std::uint64_t seed = 0;
};

struct SftResult {
  PolicyParams params;
  std::vector<double> epoch_nll;  // mean token NLL of the corpus before training, then after each epoch
};

/// Mean per-token NLL of the responses (end-of-sequence included).
double corpus_nll(const PolicyParams& params, std::span<const SftExample> corpus);

/// Minibatch Adam on mean NLL with cosine decay over all steps. Throws
/// Error(EmptyCorpus) for an empty corpus.
SftResult sft_train(std::span<const SftExample> corpus, const SftConfig& cfg);

}  // namespace twodpo
